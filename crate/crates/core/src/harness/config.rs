use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{Family, LevelSpec};
use crate::error::{Error, Result};
use crate::hop::{Attributes, HopConfig};
use crate::ppo::PpoConfig;
use crate::tensor::AdamConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Ppo,
    Hop,
    Pnn,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Hop => "hop",
            Algorithm::Pnn => "pnn",
        }
    }
}

/// Everything a run depends on, as one flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Families of consecutive phases joined by `-`, e.g. `runner-climber-runner`.
    pub experiment: String,
    pub seed: u64,
    pub total_timesteps: u64,
    pub proc_num_levels: usize,
    pub proc_start: u64,
    pub report_epoch: u64,
    pub eval_batch_size: usize,
    pub max_ep_length: usize,
    pub max_eval_ep_len: usize,
    /// Steps between state snapshots; defaults to `report_epoch`.
    pub persist_interval: Option<u64>,
    pub also_eval_phase1: bool,

    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_coef: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub update_epochs: usize,
    pub num_minibatches: usize,
    pub max_grad_norm: f64,
    /// `null` disables KL early stopping.
    pub target_kl: Option<f64>,
    pub num_steps: usize,
    pub num_envs: usize,
    pub norm_adv: bool,
    pub clip_vloss: bool,
    pub anneal_lr: bool,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub hidden_dim: usize,

    pub min_similarity_score: f64,
    pub reward_limit: f64,
    pub checkpoint_interval: u64,
    pub trusted_cap: usize,
    pub checkpoint_gradients: bool,
    pub checkpoint_eval_episodes: usize,
    pub attributes: Attributes,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PpoConfig::default();
        let h = HopConfig::default();
        Self {
            algorithm: Algorithm::Ppo,
            experiment: "runner-climber-runner".into(),
            seed: 0,
            total_timesteps: 294_912,
            proc_num_levels: 5,
            proc_start: 1,
            report_epoch: 8192,
            eval_batch_size: 10,
            max_ep_length: 200,
            max_eval_ep_len: 200,
            persist_interval: None,
            also_eval_phase1: false,
            gamma: p.gamma,
            gae_lambda: p.gae_lambda,
            clip_coef: p.clip_coef,
            ent_coef: p.ent_coef,
            vf_coef: p.vf_coef,
            update_epochs: p.update_epochs,
            num_minibatches: p.num_minibatches,
            max_grad_norm: p.max_grad_norm,
            target_kl: Some(p.target_kl),
            num_steps: p.num_steps,
            num_envs: p.num_envs,
            norm_adv: p.norm_adv,
            clip_vloss: p.clip_vloss,
            anneal_lr: p.anneal_lr,
            learning_rate: p.learning_rate,
            adam_epsilon: AdamConfig::default().epsilon,
            hidden_dim: p.hidden_dim,
            min_similarity_score: h.min_similarity_score,
            reward_limit: h.reward_limit,
            checkpoint_interval: h.checkpoint_interval,
            trusted_cap: h.trusted_cap,
            checkpoint_gradients: h.checkpoint_gradients,
            checkpoint_eval_episodes: h.checkpoint_eval_episodes,
            attributes: h.attributes,
        }
    }
}

/// One stretch of training on a fixed level set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub family: Family,
    pub levels: Vec<LevelSpec>,
    pub steps: u64,
    /// Task label; only PNN sees it.
    pub task: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub phases: Vec<Phase>,
}

impl PhasePlan {
    /// Equal-length phases over `experiment`'s families.
    pub fn from_config(c: &RunConfig) -> Result<Self> {
        let families: Vec<Family> = c
            .experiment
            .split('-')
            .map(str::parse)
            .collect::<Result<_>>()?;
        let n = families.len() as u64;
        if !c.total_timesteps.is_multiple_of(n) {
            return Err(Error::Config(format!(
                "total_timesteps {} does not split evenly into {n} phases",
                c.total_timesteps
            )));
        }
        let phases = families
            .into_iter()
            .map(|family| Phase {
                family,
                levels: LevelSpec::range(family, c.proc_start, c.proc_num_levels),
                steps: c.total_timesteps / n,
                task: family.name().to_string(),
            })
            .collect();
        Ok(Self { phases })
    }

    /// Global step at which phase `i` starts.
    pub fn start(&self, i: usize) -> u64 {
        self.phases[..i].iter().map(|p| p.steps).sum()
    }

    pub fn total(&self) -> u64 {
        self.phases.iter().map(|p| p.steps).sum()
    }

    /// Phase in which environment step `step` (0-based) is taken, so a
    /// boundary step starts the next phase. The phase that has just finished
    /// after `n` steps is `phase_at(n - 1)`.
    pub fn phase_at(&self, step: u64) -> usize {
        let mut end = 0;
        for (i, p) in self.phases.iter().enumerate() {
            end += p.steps;
            if step < end {
                return i;
            }
        }
        self.phases.len().saturating_sub(1)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid run configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            clip_coef: self.clip_coef,
            ent_coef: self.ent_coef,
            vf_coef: self.vf_coef,
            update_epochs: self.update_epochs,
            num_minibatches: self.num_minibatches,
            max_grad_norm: self.max_grad_norm,
            target_kl: self.target_kl.unwrap_or(f64::INFINITY),
            num_steps: self.num_steps,
            num_envs: self.num_envs,
            norm_adv: self.norm_adv,
            clip_vloss: self.clip_vloss,
            anneal_lr: self.anneal_lr,
            learning_rate: self.learning_rate,
            hidden_dim: self.hidden_dim,
        }
    }

    pub fn hop(&self) -> HopConfig {
        HopConfig {
            min_similarity_score: self.min_similarity_score,
            reward_limit: self.reward_limit,
            checkpoint_interval: self.checkpoint_interval,
            trusted_cap: self.trusted_cap,
            checkpoint_gradients: self.checkpoint_gradients,
            checkpoint_eval_episodes: self.checkpoint_eval_episodes,
            attributes: self.attributes,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            epsilon: self.adam_epsilon,
            ..AdamConfig::default()
        }
    }

    pub fn persist_every(&self) -> u64 {
        self.persist_interval.unwrap_or(self.report_epoch)
    }

    /// Rejects anything that would fail or misbehave mid-run.
    pub fn validate(&self) -> Result<PhasePlan> {
        let ppo = self.ppo();
        ppo.validate()?;
        let batch = ppo.batch_size() as u64;
        let plan = PhasePlan::from_config(self)?;
        let multiple = |name: &str, v: u64| {
            if v == 0 || !v.is_multiple_of(batch) {
                Err(Error::Config(format!("{name} = {v} must be a positive multiple of the batch size {batch}")))
            } else {
                Ok(())
            }
        };
        multiple("report_epoch", self.report_epoch)?;
        multiple("persist_interval", self.persist_every())?;
        if self.algorithm == Algorithm::Hop {
            self.hop().validate(batch as usize)?;
        }
        for p in &plan.phases {
            if p.steps % batch != 0 {
                return Err(Error::Config(format!(
                    "phase length {} must be a multiple of the batch size {batch}",
                    p.steps
                )));
            }
        }
        if plan.phases.len() >= 3 && (plan.phases[0].family, &plan.phases[0].levels) != (plan.phases[2].family, &plan.phases[2].levels) {
            return Err(Error::Config("phase 3 must revisit phase 1's levels".into()));
        }
        if self.proc_num_levels == 0 || self.eval_batch_size == 0 || self.max_ep_length == 0 || self.max_eval_ep_len == 0 {
            return Err(Error::Config(
                "proc_num_levels, eval_batch_size, max_ep_length and max_eval_ep_len must be positive".into(),
            ));
        }
        if self.adam_epsilon <= 0.0 {
            return Err(Error::Config("adam_epsilon must be positive".into()));
        }
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_batch_aligned() {
        let c = RunConfig::default();
        let plan = c.validate().unwrap();
        assert_eq!(plan.phases.len(), 3);
        assert_eq!(plan.phases[0], Phase { ..plan.phases[2].clone() });
        assert_eq!(plan.total(), c.total_timesteps);
        assert_eq!(c.total_timesteps / c.checkpoint_interval, 12);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"gamma": 0.99, "bogus": 1}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let ok = RunConfig::from_json(r#"{"gamma": 0.99, "reward_limit": 5.0, "target_kl": null}"#).unwrap();
        assert_eq!(ok.gamma, 0.99);
        assert_eq!(ok.ppo().target_kl, f64::INFINITY);
    }

    #[test]
    fn misaligned_intervals_rejected() {
        let c = RunConfig {
            report_epoch: 5000,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            algorithm: Algorithm::Hop,
            checkpoint_interval: 25_000,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            experiment: "runner-climber-dodger".into(),
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            experiment: "runner-starpilot-runner".into(),
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn phase_lookup() {
        let c = RunConfig {
            total_timesteps: 3 * 8192,
            ..RunConfig::default()
        };
        let plan = c.validate().unwrap();
        assert_eq!(plan.start(2), 2 * 8192);
        assert_eq!(plan.phase_at(0), 0);
        assert_eq!(plan.phase_at(8192), 1);
        assert_eq!(plan.phase_at(3 * 8192), 2);
    }

    #[test]
    fn zero_length_plan_is_valid() {
        let c = RunConfig {
            total_timesteps: 0,
            ..RunConfig::default()
        };
        assert_eq!(c.validate().unwrap().total(), 0);
    }
}
