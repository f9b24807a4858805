use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scenefill::commands::{cmd_complete, cmd_evaluate, cmd_gen_data, cmd_train_planner};
use scenefill::config::Config;
use scenefill::dataset::list_scenes;
use scenefill::{Error, Exec, Result};

const THREADS_ENV: &str = "SCENEFILL_THREADS";

#[derive(Parser, Debug)]
#[command(name = "scenefill", version, about = "Volume-guided progressive scene completion")]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the view planner; writes the checkpoint and `<out>.log.csv`.
    TrainPlanner {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Complete scenes; without --scene every held-out scene is processed.
    Complete {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: Option<String>,
        /// dqn, random or uniform<k> (uniform5, uniform10, ...).
        #[arg(long)]
        policy: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score runs/<method>/<scene>.ply against the dataset ground truth.
    Evaluate {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn thread_count(cfg: &Config) -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(cfg.threads),
    }
}

#[cfg(feature = "parallel")]
fn setup_exec(threads: Option<usize>) -> Exec {
    if let Some(n) = threads {
        // a pool may already exist when embedded; the first one wins
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Exec::Parallel
}

#[cfg(not(feature = "parallel"))]
fn setup_exec(_threads: Option<usize>) -> Exec {
    Exec::Sequential
}

fn held_out(cfg: &Config, data: &Path) -> Result<Vec<PathBuf>> {
    let dirs = list_scenes(data)?;
    Ok(dirs.into_iter().skip(cfg.dataset.n_train).collect())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let exec = setup_exec(thread_count(&cfg)?);
    match cli.command {
        Command::GenData { out } => {
            let dirs = cmd_gen_data(exec, &cfg, &out)?;
            println!("wrote {} scenes to {}", dirs.len(), out.display());
        }
        Command::TrainPlanner { data, out, checkpoint } => {
            let s = cmd_train_planner(exec, &cfg, &data, &out, checkpoint.as_deref())?;
            println!("{} episodes, {} train steps, checkpoint {}", s.episodes, s.train_steps, out.display());
        }
        Command::Complete { data, scene, policy, checkpoint, out } => {
            let scenes = match scene {
                Some(id) => vec![data.join(id)],
                None => held_out(&cfg, &data)?,
            };
            if scenes.is_empty() {
                return Err(Error::Config("no scenes to complete".into()));
            }
            for dir in scenes {
                let (ply, _) = cmd_complete(exec, &cfg, &dir, &policy, checkpoint.as_deref(), &out)?;
                println!("{}", ply.display());
            }
        }
        Command::Evaluate { runs, data, out } => {
            let rows = cmd_evaluate(exec, &cfg, &runs, &data, &out)?;
            for r in rows.iter().filter(|r| r.scene == "mean") {
                println!("{}: cd {:.6}", r.method, r.cd);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
