//! Batch commands behind the `scenefill` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::dataset::{generate_dataset, list_scenes, read_scene, SceneRecord};
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_ply, write_ply};
use crate::metrics::normalized_scores;
use crate::par::Exec;
use crate::pipeline::{complete_scene, gt_cloud, run_episode, DqnPolicy, Exploration, Policy, RandomPolicy, UniformPolicy};
use crate::planner::{DqnAgent, QNetwork, TrainLogRow, TRAIN_LOG_HEADER};

pub fn cmd_gen_data(exec: Exec, cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    generate_dataset(exec, cfg, out)
}

/// Log file written next to a checkpoint.
pub fn train_log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.csv")
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub episodes: usize,
    pub train_steps: u64,
    pub log: Vec<TrainLogRow>,
}

fn log_csv(rows: &[TrainLogRow]) -> String {
    let mut s = String::from(TRAIN_LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

fn training_split(cfg: &Config, data: &Path) -> Result<Vec<SceneRecord>> {
    let dirs = list_scenes(data)?;
    let n = cfg.dataset.n_train.min(dirs.len());
    if n == 0 {
        return Err(Error::contract(format!("no training scenes under {}", data.display())));
    }
    dirs[..n].iter().map(|d| read_scene(d)).collect()
}

/// Pre-fills the replay buffer with random episodes, then alternates
/// epsilon-greedy episodes with one train step per collected transition.
/// Writes the checkpoint every `checkpoint_every` training episodes and at
/// the end, together with the log CSV.
pub fn cmd_train_planner(
    exec: Exec,
    cfg: &Config,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    let scenes = training_split(cfg, data)?;
    let agent_cfg = cfg.agent_config();
    let mut agent = match resume {
        Some(p) => DqnAgent::from_network(QNetwork::load(p)?, agent_cfg, exec)?,
        None => DqnAgent::new(agent_cfg, exec)?,
    };
    if agent.net.config.input_dim != cfg.pipeline.net_input_dim() {
        return Err(Error::config("checkpoint input size does not match the configured encoding"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let log_path = train_log_path(out);
    let mut log = Vec::new();
    let total = cfg.train.fill_episodes + cfg.train.train_episodes;
    for ep in 0..total {
        let rec = &scenes[rng.random_range(0..scenes.len())];
        let mut pcfg = cfg.pipeline_config();
        pcfg.seed = cfg.seed.wrapping_add(ep as u64);
        let explore = if ep < cfg.train.fill_episodes { Exploration::Random } else { Exploration::EpsilonGreedy };
        let episode = run_episode(exec, &rec.input, &rec.input_cam, &rec.action_gt, &mut agent, explore, &pcfg)?;
        let n = episode.transitions.len();
        let mean_reward = if n == 0 { 0.0 } else { episode.transitions.iter().map(|t| t.reward).sum::<f64>() / n as f64 };
        for t in episode.transitions {
            agent.buffer.push(t);
        }
        if explore == Exploration::Random {
            continue;
        }
        for _ in 0..n {
            if !agent.ready() {
                break;
            }
            let epsilon = agent.epsilon();
            let loss = agent.train_step()?;
            log.push(TrainLogRow {
                step: agent.train_steps(),
                episode: ep as u64,
                loss,
                epsilon,
                mean_reward,
                hole_ratio: episode.final_hole_ratio,
            });
        }
        let done = ep + 1 - cfg.train.fill_episodes;
        if cfg.train.checkpoint_every > 0 && done.is_multiple_of(cfg.train.checkpoint_every) {
            agent.net.save(out)?;
            atomic_write(&log_path, log_csv(&log).as_bytes())?;
        }
    }
    agent.net.save(out)?;
    atomic_write(&log_path, log_csv(&log).as_bytes())?;
    Ok(TrainSummary { episodes: total, train_steps: agent.train_steps(), log })
}

/// Parses `dqn`, `random`, `uniform<k>` (e.g. `uniform5`).
pub fn make_policy(name: &str, checkpoint: Option<&Path>, seed: u64) -> Result<Box<dyn Policy>> {
    match name {
        "dqn" => {
            let path = checkpoint.ok_or_else(|| Error::config("policy dqn needs --checkpoint"))?;
            Ok(Box::new(DqnPolicy { net: QNetwork::load(path)? }))
        }
        "random" => Ok(Box::new(RandomPolicy::new(seed))),
        _ => {
            let k = name
                .strip_prefix("uniform")
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| Error::config(format!("unknown policy '{name}'")))?;
            Ok(Box::new(UniformPolicy::new(k)?))
        }
    }
}

/// Completes one dataset scene and writes `<out>/<id>.ply` and
/// `<out>/<id>.trace.jsonl`. Ground truth is only handed to the pipeline when
/// the inpainter needs it.
pub fn cmd_complete(
    exec: Exec,
    cfg: &Config,
    scene_dir: &Path,
    policy: &str,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let rec = read_scene(scene_dir)?;
    let mut pol = make_policy(policy, checkpoint, cfg.seed)?;
    let pcfg = cfg.pipeline_config();
    let gt = pcfg.inpainter.needs_ground_truth().then_some(rec.action_gt.as_slice());
    let (cloud, trace) = complete_scene(exec, &rec.input, &rec.input_cam, pol.as_mut(), gt, &pcfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ply = out.join(format!("{}.ply", rec.id));
    let tr = out.join(format!("{}.trace.jsonl", rec.id));
    write_ply(&ply, &cloud)?;
    atomic_write(&tr, trace.to_jsonl()?.as_bytes())?;
    Ok((ply, tr))
}

fn threshold_label(t: f64) -> String {
    let milli = t * 1000.0;
    if (milli - milli.round()).abs() < 1e-9 {
        format!("c_{t:.3}")
    } else {
        format!("c_{t}")
    }
}

pub fn report_header(thresholds: &[f64]) -> String {
    let mut h = String::from("method,scene,cd");
    for t in thresholds {
        h.push(',');
        h.push_str(&threshold_label(*t));
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub scene: String,
    pub cd: f64,
    pub completeness: Vec<f64>,
}

impl ReportRow {
    fn csv_line(&self) -> String {
        let mut s = format!("{},{},{}", self.method, self.scene, self.cd);
        for c in &self.completeness {
            let _ = write!(s, ",{c}");
        }
        s
    }
}

fn subdirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    Ok(v)
}

/// Scores every `<runs>/<method>/<scene>.ply` against the ground-truth cloud
/// of the matching dataset scene and writes per-scene rows plus one `mean`
/// row per method.
pub fn cmd_evaluate(exec: Exec, cfg: &Config, runs: &Path, data: &Path, out: &Path) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for method_dir in subdirs(runs)? {
        let method = method_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let mut plys: Vec<PathBuf> = std::fs::read_dir(&method_dir)
            .map_err(|e| Error::io(&method_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ply"))
            .collect();
        plys.sort();
        let mut method_rows = Vec::new();
        for ply in plys {
            let scene = ply.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let rec = read_scene(&data.join(&scene))?;
            let gt = gt_cloud(&rec.action_views, &rec.action_gt)?;
            let p = read_ply(&ply)?;
            let s = normalized_scores(exec, &p, &gt, &cfg.thresholds)?;
            method_rows.push(ReportRow { method: method.clone(), scene, cd: s.chamfer, completeness: s.completeness });
        }
        if method_rows.is_empty() {
            continue;
        }
        let n = method_rows.len() as f64;
        let mean = ReportRow {
            method: method.clone(),
            scene: "mean".into(),
            cd: method_rows.iter().map(|r| r.cd).sum::<f64>() / n,
            completeness: (0..cfg.thresholds.len())
                .map(|i| method_rows.iter().map(|r| r.completeness[i]).sum::<f64>() / n)
                .collect(),
        };
        rows.extend(method_rows);
        rows.push(mean);
    }
    if rows.is_empty() {
        return Err(Error::contract(format!("no runs found under {}", runs.display())));
    }
    let mut csv = report_header(&cfg.thresholds);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    atomic_write(out, csv.as_bytes())?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_labels() {
        assert_eq!(report_header(&[0.002, 0.01]), "method,scene,cd,c_0.002,c_0.010");
        assert_eq!(report_header(&[0.0025]), "method,scene,cd,c_0.0025");
    }

    #[test]
    fn policy_names() {
        assert!(make_policy("uniform5", None, 0).is_ok());
        assert!(make_policy("random", None, 0).is_ok());
        assert!(make_policy("dqn", None, 0).err().unwrap().is_validation());
        assert!(make_policy("uniform0", None, 0).is_err());
        assert!(make_policy("greedy", None, 0).is_err());
    }
}
