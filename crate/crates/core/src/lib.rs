//! Continual reinforcement learning with a hierarchical orchestra of policies.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors, a reverse-mode autodiff graph, MLPs and Adam.
//! - [`envs`]: the MiniProc gridworld suite (runner, climber, dodger).
//! - [`ppo`]: rollout collection, GAE, the clipped PPO update and evaluation.
//! - [`hop`]: checkpoints with trusted states, similarity activation, hierarchical
//!   weighting, joined-policy logits and activation-masked updates.
//! - [`pnn`]: the progressive-network baseline with per-task columns and adapters.
//! - [`harness`]: the three-phase experiment protocol, metrics, persistence and CLI glue.

pub mod envs;
pub mod error;
pub mod harness;
pub mod hop;
pub mod pnn;
pub mod ppo;
pub mod tensor;

pub use error::{Error, Result};

/// Seedable generator used everywhere randomness is needed.
pub type RunRng = rand_chacha::ChaCha8Rng;
