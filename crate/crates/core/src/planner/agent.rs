use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{NetConfig, QNetwork};
use super::replay::{ReplayBuffer, Transition};
use super::{argmax, select_action, EpsilonSchedule, StateEncoding};
use crate::error::{Error, Result};
use crate::geometry::ACTION_COUNT;
use crate::par::Exec;

pub const TRAIN_LOG_HEADER: &str = "step,episode,loss,epsilon,mean_reward,hole_ratio";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub episode: u64,
    pub loss: f64,
    pub epsilon: f64,
    pub mean_reward: f64,
    pub hole_ratio: f64,
}

impl TrainLogRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.episode, self.loss, self.epsilon, self.mean_reward, self.hole_ratio
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub net: NetConfig,
    pub gamma: f64,
    pub lr: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub sync_period: u64,
    pub buffer_capacity: usize,
    pub epsilon: EpsilonSchedule,
    pub seed: u64,
}

impl AgentConfig {
    pub fn with_input(input_dim: usize) -> Self {
        AgentConfig {
            net: NetConfig { input_dim, hidden1: 256, hidden2: 128, trunk: 512 },
            gamma: 0.9,
            lr: 1e-3,
            grad_clip: 10.0,
            batch_size: 16,
            sync_period: 500,
            buffer_capacity: 5000,
            epsilon: EpsilonSchedule::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.epsilon.validate()?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma must lie in [0, 1)"));
        }
        if !(self.lr > 0.0) || !(self.grad_clip >= 0.0) {
            return Err(Error::config("learning rate must be positive and clip non-negative"));
        }
        if self.batch_size == 0 || self.sync_period == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::config("batch, sync period and capacity must be positive with capacity >= batch"));
        }
        Ok(())
    }
}

/// Double-DQN targets: the online network picks the next action, the target
/// network scores it. Terminal transitions keep the bare reward.
pub fn td_target(batch: &[&Transition], net: &QNetwork, target: &QNetwork, gamma: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| match &t.next_state {
            None => Ok(t.reward),
            Some(next) => {
                let a = argmax(&net.q_values(next)?);
                Ok(t.reward + gamma * target.q_values(next)?[a])
            }
        })
        .collect()
}

/// One SGD update on a uniformly sampled batch; returns the pre-update loss.
pub fn train_step<R: Rng>(
    exec: Exec,
    buffer: &ReplayBuffer,
    net: &mut QNetwork,
    target: &QNetwork,
    cfg: &AgentConfig,
    rng: &mut R,
) -> Result<f64> {
    let batch = buffer.sample(cfg.batch_size, rng)?;
    let targets = td_target(&batch, net, target, cfg.gamma)?;
    let states: Vec<&StateEncoding> = batch.iter().map(|t| t.state.as_ref()).collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let (loss, grads) = net.loss_and_grad(exec, &states, &actions, &targets)?;
    net.sgd_update(&grads, cfg.lr, cfg.grad_clip);
    Ok(loss)
}

pub fn sync_target(net: &QNetwork, target: &mut QNetwork) {
    target.clone_from(net);
}

/// Online and target networks, replay memory and the agent's private RNG.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub net: QNetwork,
    pub target: QNetwork,
    pub buffer: ReplayBuffer,
    pub cfg: AgentConfig,
    pub exec: Exec,
    steps: u64,
    rng: ChaCha8Rng,
}

impl DqnAgent {
    pub fn new(cfg: AgentConfig, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = QNetwork::new(cfg.net, &mut rng)?;
        DqnAgent::assemble(net, cfg, exec, rng)
    }

    /// Starts from existing weights, e.g. a loaded checkpoint.
    pub fn from_network(net: QNetwork, mut cfg: AgentConfig, exec: Exec) -> Result<Self> {
        cfg.net = net.config;
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        DqnAgent::assemble(net, cfg, exec, rng)
    }

    fn assemble(net: QNetwork, cfg: AgentConfig, exec: Exec, rng: ChaCha8Rng) -> Result<Self> {
        Ok(DqnAgent { target: net.clone(), net, buffer: ReplayBuffer::new(cfg.buffer_capacity)?, cfg, exec, steps: 0, rng })
    }

    pub fn train_steps(&self) -> u64 {
        self.steps
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon.value(self.steps)
    }

    pub fn q_values(&self, s: &StateEncoding) -> Result<[f64; ACTION_COUNT]> {
        self.net.q_values(s)
    }

    /// Epsilon-greedy action at the current schedule value.
    pub fn act(&mut self, s: &StateEncoding) -> Result<usize> {
        let q = self.net.q_values(s)?;
        let eps = self.epsilon();
        Ok(select_action(&q, eps, &mut self.rng))
    }

    pub fn greedy(&self, s: &StateEncoding) -> Result<usize> {
        Ok(argmax(&self.net.q_values(s)?))
    }

    pub fn random_action(&mut self) -> usize {
        self.rng.random_range(0..ACTION_COUNT)
    }

    pub fn remember(&mut self, state: Arc<StateEncoding>, action: usize, reward: f64, next: Option<Arc<StateEncoding>>) {
        self.buffer.push(Transition { state, action, reward, next_state: next });
    }

    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.cfg.batch_size
    }

    /// Trains once and syncs the target network every `sync_period` steps.
    pub fn train_step(&mut self) -> Result<f64> {
        let loss = train_step(self.exec, &self.buffer, &mut self.net, &self.target, &self.cfg, &mut self.rng)?;
        self.steps += 1;
        if self.steps.is_multiple_of(self.cfg.sync_period) {
            sync_target(&self.net, &mut self.target);
        }
        Ok(loss)
    }
}
