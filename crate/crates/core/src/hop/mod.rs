//! Hierarchical orchestra of policies.
//!
//! Every `checkpoint_interval` steps the learner's actor is frozen as a
//! checkpoint, together with the states visited by its successful
//! evaluation episodes. At decision time each checkpoint whose trusted set
//! holds a state close enough to the current one joins in: its own joined
//! logits at the matched state are added to the learner's logits, weighted so
//! that later checkpoints count more.

mod agent;
mod checkpoint;
mod orchestra;
mod trusted;
mod weights;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use agent::HopAgent;
pub use checkpoint::{checkpoint_now, checkpoint_rng, harvest, load_bundle, save_bundle, CheckpointReport};
pub use orchestra::{
    compute_activations, expand_terms, joined_policy_logits, ActivationVector, CheckpointPolicy, Orchestra, StateRef,
    Term,
};
pub use trusted::{cosine_similarity, BestMatch, TrustedStateSet};
pub use weights::hierarchical_weights;

/// Which policy the PPO probability ratio is taken under.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attributes {
    /// Joined policy for both behaviour and update log-probs.
    #[default]
    Joined,
    /// Learner alone; checkpoints then receive no gradient.
    Learner,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopConfig {
    /// Cosine similarity a trusted state must exceed to activate its checkpoint.
    pub min_similarity_score: f64,
    /// Episodes must return strictly more than this to be harvested.
    pub reward_limit: f64,
    pub checkpoint_interval: u64,
    pub trusted_cap: usize,
    pub checkpoint_gradients: bool,
    pub checkpoint_eval_episodes: usize,
    pub attributes: Attributes,
}

impl Default for HopConfig {
    fn default() -> Self {
        Self {
            min_similarity_score: 0.98,
            reward_limit: 7.5,
            checkpoint_interval: 24_576,
            trusted_cap: 4096,
            checkpoint_gradients: true,
            checkpoint_eval_episodes: 10,
            attributes: Attributes::Joined,
        }
    }
}

impl HopConfig {
    pub fn validate(&self, batch_size: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.min_similarity_score > 0.0 && self.min_similarity_score < 1.0) {
            return fail("min_similarity_score must lie strictly between 0 and 1".into());
        }
        if self.checkpoint_interval == 0 || !self.checkpoint_interval.is_multiple_of(batch_size as u64) {
            return fail(format!(
                "checkpoint_interval {} must be a positive multiple of the batch size {batch_size}",
                self.checkpoint_interval
            ));
        }
        if self.trusted_cap == 0 || self.checkpoint_eval_episodes == 0 {
            return fail("trusted_cap and checkpoint_eval_episodes must be positive".into());
        }
        Ok(())
    }
}
