use serde::{Deserialize, Serialize};

use crate::envs::Observation;
use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Which checkpoints were active for one timestep, and which trusted state
/// each active checkpoint matched. Empty when no orchestra is in play.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub active: Vec<bool>,
    /// Row of the best-matching trusted state, for active checkpoints only.
    pub matches: Vec<Option<usize>>,
}

impl ActivationRecord {
    pub fn none(num_checkpoints: usize) -> Self {
        Self {
            active: vec![false; num_checkpoints],
            matches: vec![None; num_checkpoints],
        }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Fixed-capacity storage for one rollout, laid out `[step, env]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBuffer {
    pub num_steps: usize,
    pub num_envs: usize,
    pub obs_dim: usize,
    obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `true` when the transition at this index ended its episode.
    pub dones: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub activations: Vec<ActivationRecord>,
    /// Critic estimates for the observations following the last step.
    pub bootstrap_values: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(num_steps: usize, num_envs: usize, obs_dim: usize) -> Self {
        let cap = num_steps * num_envs;
        Self {
            num_steps,
            num_envs,
            obs_dim,
            obs: Vec::with_capacity(cap * obs_dim),
            actions: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
            dones: Vec::with_capacity(cap),
            log_probs: Vec::with_capacity(cap),
            values: Vec::with_capacity(cap),
            activations: Vec::with_capacity(cap),
            bootstrap_values: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.num_steps * self.num_envs
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity() && self.bootstrap_values.len() == self.num_envs
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        obs: &Observation,
        action: usize,
        reward: f64,
        done: bool,
        log_prob: f64,
        value: f64,
        activation: ActivationRecord,
    ) -> Result<()> {
        contract!(self.len() < self.capacity(), "rollout buffer is full");
        contract!(obs.0.len() == self.obs_dim, "observation width mismatch");
        self.obs.extend_from_slice(&obs.0);
        self.actions.push(action);
        self.rewards.push(reward);
        self.dones.push(done);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.activations.push(activation);
        Ok(())
    }

    pub fn obs_row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn obs_rows(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.obs_dim);
        for &i in idx {
            data.extend_from_slice(self.obs_row(i));
        }
        Tensor::matrix(idx.len(), self.obs_dim, data).expect("sized")
    }

    /// Mean number of active checkpoints per stored timestep.
    pub fn mean_active_checkpoints(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let total: usize = self.activations.iter().map(ActivationRecord::count).sum();
        total as f64 / self.len() as f64
    }
}
