//! Proximal policy optimisation with separate actor and critic networks.
//!
//! The pieces are deliberately independent of *what* produces the logits:
//! [`ActorCritic`] abstracts action selection (plain learner, HOP joined
//! policy, PNN column) and [`PpoModel`] abstracts the differentiable forward
//! pass used by [`ppo_update`], which is also where gradient routing happens.

mod buffer;
mod collect;
mod config;
mod eval;
mod gae;
mod model;
mod update;

pub use buffer::{ActivationRecord, RolloutBuffer};
pub use collect::collect_rollout;
pub use config::PpoConfig;
pub use eval::{evaluate_policy, run_episodes, EpisodeTrace, EvalResult, EVAL_STEP_PENALTY};
pub use gae::{compute_gae, GaeOutput};
pub use model::{act_with_logits, apply_named, sample_from_logits, ActionChoice, ActorCritic, PpoAgent, PpoModel, TrainForward};
pub use update::{collect_grads, ppo_loss, ppo_update, LossTerms, UpdateStats};
