//! View planning as an MDP: state encoding, rewards, the dueling Q-network,
//! experience replay and the double-DQN training step.

mod agent;
mod network;
mod replay;
mod reward;

pub use agent::{sync_target, td_target, train_step, AgentConfig, DqnAgent, TrainLogRow, TRAIN_LOG_HEADER};
pub use network::{flatten, grad_norm, Gradients, Layer, NetConfig, QNetwork, CHECKPOINT_MAGIC};
pub use replay::{ReplayBuffer, Transition};
pub use reward::{hole_area, hole_area_per_view, reward_acc, reward_hole, reward_total, step_reward};

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{render_depth_with, Camera, PointCloud, ACTION_COUNT};
use crate::par::Exec;

/// Depth rasters of the current cloud seen from all 20 action views, row-major
/// per view, each `res x res`. Values are normalized depths in `[0, 1]`, holes 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoding {
    pub res: usize,
    pub views: Vec<f32>,
}

impl StateEncoding {
    pub fn view(&self, v: usize) -> &[f32] {
        let n = self.res * self.res;
        &self.views[v * n..(v + 1) * n]
    }

    /// Average-pools every view by `factor` (holes count as 0).
    pub fn pooled(&self, factor: usize) -> Result<StateEncoding> {
        if factor == 0 || !self.res.is_multiple_of(factor) {
            return Err(Error::contract(format!("pool factor {factor} does not divide {}", self.res)));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let r = self.res / factor;
        let inv = 1.0 / (factor * factor) as f32;
        let mut views = Vec::with_capacity(ACTION_COUNT * r * r);
        for v in 0..ACTION_COUNT {
            let src = self.view(v);
            for row in 0..r {
                for col in 0..r {
                    let mut s = 0.0f32;
                    for dy in 0..factor {
                        let base = (row * factor + dy) * self.res + col * factor;
                        s += src[base..base + factor].iter().sum::<f32>();
                    }
                    views.push(s * inv);
                }
            }
        }
        Ok(StateEncoding { res: r, views })
    }
}

/// Renders the cloud from every action view at `res x res` and divides the
/// depths by `depth_norm`, clamping to 1.
pub fn encode_state(
    exec: Exec,
    cloud: &PointCloud,
    views: &[Camera],
    res: usize,
    splat_radius: usize,
    depth_norm: f64,
) -> Result<StateEncoding> {
    if cloud.is_empty() {
        return Err(Error::contract("cannot encode an empty cloud"));
    }
    if views.len() != ACTION_COUNT {
        return Err(Error::contract(format!("expected {ACTION_COUNT} views, got {}", views.len())));
    }
    if res == 0 || !(depth_norm > 0.0) {
        return Err(Error::contract("encode resolution and depth scale must be positive"));
    }
    let inv = (1.0 / depth_norm) as f32;
    let mut out = Vec::with_capacity(ACTION_COUNT * res * res);
    for cam in views {
        let d = render_depth_with(exec, cloud, &cam.with_resolution(res, res), splat_radius);
        out.extend(d.data.iter().map(|z| (z * inv).min(1.0)));
    }
    Ok(StateEncoding { res, views: out })
}

/// Linear schedule of the greedy probability, held at `end` after `decay_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { start: 0.9, end: 0.2, decay_steps: 10_000 }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.start) || !unit(self.end) {
            return Err(Error::config("epsilon bounds must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let t = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * t
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// `eps_value` is the probability of acting greedily; otherwise a uniform
/// random view is returned.
pub fn select_action<R: Rng>(q: &[f64; ACTION_COUNT], eps_value: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < eps_value {
        argmax(q)
    } else {
        rng.random_range(0..ACTION_COUNT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_action_views, BoundingSphere, ViewConfig};
    use nalgebra::Point3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn views() -> Vec<Camera> {
        let s = BoundingSphere { center: Point3::origin(), radius: 1.0 };
        sample_action_views(&s, 2.0, &ViewConfig { width: 32, height: 32, vfov_deg: 60.0 }).unwrap().to_vec()
    }

    #[test]
    fn single_point_encoding() {
        let cloud = PointCloud::new(vec![Point3::new(0.1, -0.2, 0.3)]);
        let v = views();
        let s = encode_state(Exec::Sequential, &cloud, &v, 16, 1, 3.0).unwrap();
        assert_eq!(s.views.len(), 20 * 256);
        for i in 0..20 {
            let valid = s.view(i).iter().filter(|x| **x > 0.0).count();
            assert!(valid <= 9);
        }
        assert!(s.views.iter().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(s, encode_state(Exec::Sequential, &cloud, &v, 16, 1, 3.0).unwrap());
        assert!(encode_state(Exec::Sequential, &PointCloud::new(vec![]), &v, 16, 1, 3.0).is_err());
    }

    #[test]
    fn pooling_averages_blocks() {
        let mut views = vec![0.0f32; 20 * 16];
        views[0] = 1.0;
        views[1] = 0.5;
        let s = StateEncoding { res: 4, views }.pooled(2).unwrap();
        assert_eq!(s.res, 2);
        assert_eq!(s.view(0)[0], 0.375);
        assert!(StateEncoding { res: 4, views: vec![0.0; 320] }.pooled(3).is_err());
    }

    #[test]
    fn epsilon_schedule() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.value(0), 0.9);
        assert!((e.value(5000) - 0.55).abs() < 1e-12);
        assert_eq!(e.value(10_000), 0.2);
        assert_eq!(e.value(50_000), 0.2);
    }

    #[test]
    fn greedy_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = [0.0; ACTION_COUNT];
        q[3] = 1.0;
        q[7] = 1.0;
        for _ in 0..100 {
            assert_eq!(select_action(&q, 1.0, &mut rng), 3);
        }
    }
}
