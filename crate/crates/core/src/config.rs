//! Flat `key = value` configuration covering every tunable default.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! values that fail validation are rejected at load time.

use std::path::Path;

use crate::error::{Error, Result};
use crate::inpaint::Inpainter;
use crate::io::read_string;
use crate::pipeline::PipelineConfig;
use crate::planner::{AgentConfig, NetConfig};
use crate::scenegen::{JitterParams, SceneParams};
use crate::volume::Completer;

/// Default completeness thresholds, in scene-diameter units.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.002, 0.004, 0.006, 0.008, 0.010];

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub n_scenes: usize,
    pub n_train: usize,
    pub nearby_views: usize,
    pub jitter: JitterParams,
    pub scene: SceneParams,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            n_scenes: 60,
            n_train: 50,
            nearby_views: 4,
            jitter: JitterParams::default(),
            scene: SceneParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub fill_episodes: usize,
    pub train_episodes: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { fill_episodes: 200, train_episodes: 300, checkpoint_every: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
    pub pipeline: PipelineConfig,
    pub agent: AgentConfig,
    pub dataset: DatasetParams,
    pub train: TrainParams,
    pub thresholds: Vec<f64>,
}

impl Default for Config {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        Config {
            seed: 0,
            threads: None,
            agent: AgentConfig::with_input(pipeline.net_input_dim()),
            pipeline,
            dataset: DatasetParams::default(),
            train: TrainParams::default(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(format!("invalid value '{v}' for key '{key}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean '{v}' for key '{key}'"))),
    }
}

fn parse_range<T: std::str::FromStr>(key: &str, v: &str) -> Result<(T, T)> {
    let (a, b) = v.split_once(',').ok_or_else(|| Error::config(format!("key '{key}' expects 'min,max'")))?;
    Ok((parse_num(key, a.trim())?, parse_num(key, b.trim())?))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        Config::parse(&read_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut completer = "diffusion".to_string();
        let mut factor = 4usize;
        let mut diffusion_iters = 200usize;
        let mut inpainter = "guided_fill".to_string();
        let mut lambda = 1.0f64;
        let mut sigma = 0.0f64;
        let mut hidden = (256usize, 128usize, 512usize);
        let mut seen = std::collections::HashSet::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::config(format!("duplicate key '{k}'")));
            }
            let p = &mut cfg.pipeline;
            let a = &mut cfg.agent;
            let d = &mut cfg.dataset;
            match k {
                "seed" => cfg.seed = parse_num(k, v)?,
                "threads" => cfg.threads = Some(parse_num(k, v)?),
                "width" => p.view.width = parse_num(k, v)?,
                "height" => p.view.height = parse_num(k, v)?,
                "vfov_deg" => p.view.vfov_deg = parse_num(k, v)?,
                "distance_scale" => p.distance_scale = parse_num(k, v)?,
                "d_max" => p.d_max = parse_num(k, v)?,
                "splat_radius" => p.splat_radius = parse_num(k, v)?,
                "grid_dim" => p.grid_dim = parse_num(k, v)?,
                "grid_margin" => p.grid_margin = parse_num(k, v)?,
                "completer" => completer = v.to_string(),
                "completion_factor" => factor = parse_num(k, v)?,
                "diffusion_iters" => diffusion_iters = parse_num(k, v)?,
                "inpainter" => inpainter = v.to_string(),
                "laplacian_lambda" => lambda = parse_num(k, v)?,
                "oracle_sigma" => sigma = parse_num(k, v)?,
                "max_iters" => p.max_iters = parse_num(k, v)?,
                "termination_ratio" => p.termination_ratio = parse_num(k, v)?,
                "dedup_voxel" => {
                    let r: f64 = parse_num(k, v)?;
                    p.dedup_voxel = (r > 0.0).then_some(r);
                }
                "recomplete" => p.recomplete = parse_bool(k, v)?,
                "encode_res" => p.encode_res = parse_num(k, v)?,
                "net_pool" => p.net_pool = parse_num(k, v)?,
                "reward_weight" => p.reward_weight = parse_num(k, v)?,
                "hidden1" => hidden.0 = parse_num(k, v)?,
                "hidden2" => hidden.1 = parse_num(k, v)?,
                "trunk" => hidden.2 = parse_num(k, v)?,
                "gamma" => a.gamma = parse_num(k, v)?,
                "lr" => a.lr = parse_num(k, v)?,
                "grad_clip" => a.grad_clip = parse_num(k, v)?,
                "batch_size" => a.batch_size = parse_num(k, v)?,
                "sync_period" => a.sync_period = parse_num(k, v)?,
                "buffer_capacity" => a.buffer_capacity = parse_num(k, v)?,
                "eps_start" => a.epsilon.start = parse_num(k, v)?,
                "eps_end" => a.epsilon.end = parse_num(k, v)?,
                "eps_decay_steps" => a.epsilon.decay_steps = parse_num(k, v)?,
                "fill_episodes" => cfg.train.fill_episodes = parse_num(k, v)?,
                "train_episodes" => cfg.train.train_episodes = parse_num(k, v)?,
                "checkpoint_every" => cfg.train.checkpoint_every = parse_num(k, v)?,
                "n_scenes" => d.n_scenes = parse_num(k, v)?,
                "n_train" => d.n_train = parse_num(k, v)?,
                "nearby_views" => d.nearby_views = parse_num(k, v)?,
                "jitter_deg" => d.jitter.max_deg = parse_num(k, v)?,
                "jitter_m" => d.jitter.max_m = parse_num(k, v)?,
                "room_xy" => d.scene.room_xy = parse_range(k, v)?,
                "room_height" => d.scene.room_height = parse_range(k, v)?,
                "walls" => d.scene.walls = parse_range(k, v)?,
                "furniture" => d.scene.furniture = parse_range(k, v)?,
                "box_footprint" => d.scene.box_footprint = parse_range(k, v)?,
                "box_height" => d.scene.box_height = parse_range(k, v)?,
                "thresholds" => {
                    cfg.thresholds = v.split(',').map(|t| parse_num(k, t.trim())).collect::<Result<_>>()?;
                }
                other => return Err(Error::config(format!("unknown config key '{other}'"))),
            }
        }
        cfg.pipeline.completer = Completer::parse(&completer, factor, diffusion_iters)?;
        cfg.pipeline.inpainter = Inpainter::parse(&inpainter, lambda, sigma)?;
        cfg.agent.net = NetConfig {
            input_dim: cfg.pipeline.net_input_dim(),
            hidden1: hidden.0,
            hidden2: hidden.1,
            trunk: hidden.2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.agent.validate()?;
        self.dataset.scene.validate()?;
        if self.agent.net.input_dim != self.pipeline.net_input_dim() {
            return Err(Error::config("network input does not match encode_res / net_pool"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads must be positive"));
        }
        if self.pipeline.max_iters == 0 {
            return Err(Error::config("max_iters must be positive"));
        }
        let d = &self.dataset;
        if d.n_scenes == 0 || d.n_train > d.n_scenes || d.nearby_views == 0 {
            return Err(Error::config("need n_scenes > 0, n_train <= n_scenes and nearby_views > 0"));
        }
        if !(d.jitter.max_deg >= 0.0 && d.jitter.max_m >= 0.0) {
            return Err(Error::config("jitter bounds must be non-negative"));
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::config("thresholds must be a non-empty list of positive values"));
        }
        if let Inpainter::Oracle { sigma } = self.pipeline.inpainter {
            if !(sigma >= 0.0) {
                return Err(Error::config("oracle_sigma must be non-negative"));
            }
        }
        Ok(())
    }

    /// Applies a command-line seed override to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig { seed: self.seed, ..self.agent }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig { seed: self.seed, ..self.pipeline.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.agent.net.input_dim, 256);
    }

    #[test]
    fn overrides_and_comments() {
        let c = Config::parse("# desk run\nseed = 7\nthresholds = 0.01, 0.02\ninpainter = laplacian_fill\nroom_xy = 5,6\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.thresholds, vec![0.01, 0.02]);
        assert!(matches!(c.pipeline.inpainter, Inpainter::LaplacianFill { .. }));
        assert_eq!(c.dataset.scene.room_xy, (5.0, 6.0));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "bogus = 1",
            "seed = x",
            "seed = 1\nseed = 2",
            "gamma = 1.0",
            "inpainter = magic",
            "net_pool = 3",
            "trunk = 7",
            "n_train = 100",
            "reward_weight = 1.5",
            "no equals sign",
        ] {
            let e = Config::parse(text).unwrap_err();
            assert!(e.is_validation(), "{text}: {e}");
        }
    }
}
