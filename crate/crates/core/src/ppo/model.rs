use std::collections::HashMap;

use super::{ActivationRecord, RolloutBuffer};
use crate::envs::{NUM_ACTIONS, OBS_DIM};
use crate::error::Result;
use crate::tensor::{
    log_softmax_row, sample_categorical, softmax_row, Activation, AdamState, Graph, Mlp, Parameterized, Tensor, Var,
};
use crate::RunRng;

/// One sampled action together with what produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionChoice {
    pub action: usize,
    pub log_prob: f64,
    pub logits: Vec<f64>,
    pub activation: ActivationRecord,
}

/// Samples an action from unnormalised `logits`.
pub fn sample_from_logits(logits: &[f64], rng: &mut RunRng) -> Result<(usize, f64)> {
    let action = sample_categorical(&softmax_row(logits), rng)?;
    Ok((action, log_softmax_row(logits)[action]))
}

/// Something that can pick actions and estimate state values.
pub trait ActorCritic {
    /// Chooses one action per row of `obs` (`[batch, OBS_DIM]`).
    fn act(&mut self, obs: &Tensor, rng: &mut RunRng) -> Result<Vec<ActionChoice>>;

    fn values(&self, obs: &Tensor) -> Result<Vec<f64>>;
}

/// Differentiable view of the policy used by [`super::ppo_update`].
pub struct TrainForward {
    /// `[batch, actions]` logits whose log-softmax enters the surrogate.
    pub logits: Var,
    /// `[batch, 1]` value predictions.
    pub values: Var,
    /// Trainable handles; only these are updated.
    pub params: Vec<(String, Var)>,
}

pub trait PpoModel: ActorCritic {
    /// Builds the forward pass for buffer rows `idx`.
    fn forward_train(&self, g: &mut Graph, buffer: &RolloutBuffer, idx: &[usize]) -> Result<TrainForward>;

    /// Applies one optimiser step with already clipped gradients.
    fn apply_gradients(&mut self, grads: &[(String, Tensor)], adam: &mut AdamState) -> Result<()>;
}

/// Adam-steps every parameter of `model` under `prefix` that has a gradient.
pub fn apply_named(
    model: &mut dyn Parameterized,
    prefix: &str,
    grads: &HashMap<&str, &Tensor>,
    adam: &mut AdamState,
) -> Result<()> {
    let mut result = Ok(());
    model.visit_mut(prefix, &mut |name, param| {
        if result.is_err() {
            return;
        }
        if let Some(g) = grads.get(name.as_str()) {
            result = adam.step(&name, param, g);
        }
    });
    result
}

/// The plain learner: separate actor and critic MLPs.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoAgent {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PpoAgent {
    pub fn new(hidden: usize, rng: &mut RunRng) -> Self {
        Self {
            actor: Mlp::new(&[OBS_DIM, hidden, hidden, NUM_ACTIONS], Activation::Tanh, 0.01, rng),
            critic: Mlp::new(&[OBS_DIM, hidden, hidden, 1], Activation::Tanh, 1.0, rng),
        }
    }
}

pub fn act_with_logits(logits: &Tensor, records: Vec<ActivationRecord>, rng: &mut RunRng) -> Result<Vec<ActionChoice>> {
    (0..logits.rows())
        .zip(records)
        .map(|(r, activation)| {
            let row = logits.row(r);
            let (action, log_prob) = sample_from_logits(row, rng)?;
            Ok(ActionChoice {
                action,
                log_prob,
                logits: row.to_vec(),
                activation,
            })
        })
        .collect()
}

impl ActorCritic for PpoAgent {
    fn act(&mut self, obs: &Tensor, rng: &mut RunRng) -> Result<Vec<ActionChoice>> {
        let logits = self.actor.forward(obs)?;
        act_with_logits(&logits, vec![ActivationRecord::default(); obs.rows()], rng)
    }

    fn values(&self, obs: &Tensor) -> Result<Vec<f64>> {
        Ok(self.critic.forward(obs)?.into_data())
    }
}

impl PpoModel for PpoAgent {
    fn forward_train(&self, g: &mut Graph, buffer: &RolloutBuffer, idx: &[usize]) -> Result<TrainForward> {
        let x = g.constant(buffer.obs_rows(idx));
        let actor = self.actor.bind(g, true);
        let critic = self.critic.bind(g, true);
        let logits = actor.forward(g, x)?;
        let values = critic.forward(g, x)?;
        let mut params = actor.params("actor");
        params.extend(critic.params("critic"));
        Ok(TrainForward { logits, values, params })
    }

    fn apply_gradients(&mut self, grads: &[(String, Tensor)], adam: &mut AdamState) -> Result<()> {
        let map: HashMap<&str, &Tensor> = grads.iter().map(|(n, t)| (n.as_str(), t)).collect();
        apply_named(&mut self.actor, "actor", &map, adam)?;
        apply_named(&mut self.critic, "critic", &map, adam)
    }
}
