use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PPO hyperparameters. Defaults follow the published table, except the
/// desk-scale `num_envs` and network width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_coef: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub update_epochs: usize,
    pub num_minibatches: usize,
    pub max_grad_norm: f64,
    /// `f64::INFINITY` disables early stopping.
    pub target_kl: f64,
    pub num_steps: usize,
    pub num_envs: usize,
    pub norm_adv: bool,
    pub clip_vloss: bool,
    pub anneal_lr: bool,
    pub learning_rate: f64,
    pub hidden_dim: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            gae_lambda: 0.95,
            clip_coef: 0.2,
            ent_coef: 0.01,
            vf_coef: 0.5,
            update_epochs: 3,
            num_minibatches: 8,
            max_grad_norm: 0.5,
            target_kl: 0.05,
            num_steps: 256,
            num_envs: 16,
            norm_adv: true,
            clip_vloss: false,
            anneal_lr: false,
            learning_rate: 5e-4,
            hidden_dim: 256,
        }
    }
}

impl PpoConfig {
    pub fn batch_size(&self) -> usize {
        self.num_steps * self.num_envs
    }

    pub fn minibatch_size(&self) -> usize {
        self.batch_size() / self.num_minibatches.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_steps == 0 || self.num_envs == 0 {
            return fail("num_steps and num_envs must be positive");
        }
        if self.num_minibatches == 0 || !self.batch_size().is_multiple_of(self.num_minibatches) {
            return fail("num_minibatches must divide batch_size = num_steps * num_envs");
        }
        if self.update_epochs == 0 {
            return fail("update_epochs must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.clip_coef <= 0.0 || self.learning_rate <= 0.0 || self.max_grad_norm <= 0.0 {
            return fail("clip_coef, learning_rate and max_grad_norm must be positive");
        }
        if self.target_kl.is_nan() || self.target_kl <= 0.0 {
            return fail("target_kl must be positive (or infinite)");
        }
        if self.anneal_lr {
            return fail("learning-rate annealing is not supported");
        }
        if self.hidden_dim == 0 {
            return fail("hidden_dim must be positive");
        }
        Ok(())
    }
}
