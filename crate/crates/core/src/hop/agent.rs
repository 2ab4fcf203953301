use std::collections::HashMap;

use super::orchestra::{expand_record, NestedActivations};
use super::{joined_policy_logits, Attributes, HopConfig, Orchestra, StateRef};
use crate::error::{contract, Result};
use crate::ppo::{apply_named, sample_from_logits, ActionChoice, ActorCritic, PpoAgent, PpoModel, RolloutBuffer, TrainForward};
use crate::tensor::{log_softmax_row, AdamState, Graph, Mlp, Tensor};
use crate::RunRng;

/// Learner, critic and orchestra trained together by PPO.
#[derive(Clone, Debug, PartialEq)]
pub struct HopAgent {
    pub orchestra: Orchestra,
    pub critic: Mlp,
    pub config: HopConfig,
}

/// Per-checkpoint gather plan for one minibatch.
#[derive(Default)]
struct Plan {
    rows: Vec<usize>,
    slot: HashMap<usize, usize>,
    grad: Vec<(usize, usize, f64)>,
    fixed: Vec<(usize, usize, f64)>,
}

impl Plan {
    fn column(&mut self, row: usize) -> usize {
        let rows = &mut self.rows;
        *self.slot.entry(row).or_insert_with(|| {
            rows.push(row);
            rows.len() - 1
        })
    }
}

fn coefficient_matrix(batch: usize, cols: usize, entries: &[(usize, usize, f64)]) -> Tensor {
    let mut c = Tensor::zeros(&[batch, cols]);
    let data = c.data_mut();
    for &(b, col, coef) in entries {
        data[b * cols + col] += coef;
    }
    c
}

impl HopAgent {
    pub fn new(hidden: usize, config: HopConfig, rng: &mut RunRng) -> Self {
        Self::from_ppo(PpoAgent::new(hidden, rng), config)
    }

    /// Wraps a plain agent; with no checkpoints it behaves identically.
    pub fn from_ppo(agent: PpoAgent, config: HopConfig) -> Self {
        Self {
            orchestra: Orchestra {
                learner: agent.actor,
                checkpoints: Vec::new(),
                omega: config.min_similarity_score,
            },
            critic: agent.critic,
            config,
        }
    }

    pub fn num_checkpoints(&self) -> usize {
        self.orchestra.checkpoints.len()
    }

    fn checkpoint_prefix(k: usize) -> String {
        format!("ckpt{k}")
    }
}

impl ActorCritic for HopAgent {
    fn act(&mut self, obs: &Tensor, rng: &mut RunRng) -> Result<Vec<ActionChoice>> {
        let (joined, acts) = joined_policy_logits(&self.orchestra, obs)?;
        let learner = match self.config.attributes {
            Attributes::Learner if acts.iter().any(|a| a.any()) => Some(self.orchestra.learner.forward(obs)?),
            _ => None,
        };
        let mut out = Vec::with_capacity(obs.rows());
        for (r, a) in acts.iter().enumerate() {
            let row = joined.row(r);
            let (action, mut log_prob) = sample_from_logits(row, rng)?;
            if let Some(l) = &learner {
                log_prob = log_softmax_row(l.row(r))[action];
            }
            out.push(ActionChoice {
                action,
                log_prob,
                logits: row.to_vec(),
                activation: a.record(),
            });
        }
        Ok(out)
    }

    fn values(&self, obs: &Tensor) -> Result<Vec<f64>> {
        Ok(self.critic.forward(obs)?.into_data())
    }
}

impl PpoModel for HopAgent {
    /// Joined logits rebuilt from the activations stored at collection time.
    /// A checkpoint's evaluations carry gradient only on rows whose stored
    /// activations include that checkpoint; elsewhere they are constants.
    fn forward_train(&self, g: &mut Graph, buffer: &RolloutBuffer, idx: &[usize]) -> Result<TrainForward> {
        let x = g.constant(buffer.obs_rows(idx));
        let actor = self.orchestra.learner.bind(g, true);
        let critic = self.critic.bind(g, true);
        let mut logits = actor.forward(g, x)?;
        let values = critic.forward(g, x)?;
        let mut params = actor.params("actor");
        params.extend(critic.params("critic"));

        let ck = &self.orchestra.checkpoints;
        for &i in idx {
            let n = buffer.activations[i].len();
            contract!(n == ck.len(), "stored activations cover {n} checkpoints, orchestra has {}", ck.len());
        }
        let any = idx.iter().any(|&i| buffer.activations[i].count() > 0);
        if self.config.attributes == Attributes::Learner || !any {
            return Ok(TrainForward { logits, values, params });
        }

        let mut nested = NestedActivations::new(ck, self.orchestra.omega);
        let mut plans: Vec<Plan> = (0..ck.len()).map(|_| Plan::default()).collect();
        for (b, &i) in idx.iter().enumerate() {
            let record = &buffer.activations[i];
            if record.count() == 0 {
                continue;
            }
            for t in expand_record(&mut nested, b, record)?.into_iter().skip(1) {
                let StateRef::Trusted { set, row } = t.state else { unreachable!("only the learner sees the query") };
                let plan = &mut plans[set];
                let col = plan.column(row);
                if self.config.checkpoint_gradients && record.active[set] {
                    plan.grad.push((b, col, t.coef));
                } else {
                    plan.fixed.push((b, col, t.coef));
                }
            }
        }
        for (k, plan) in plans.iter().enumerate() {
            if plan.rows.is_empty() {
                continue;
            }
            let c = &ck[k];
            let mut data = Vec::with_capacity(plan.rows.len() * c.trusted.dim());
            for &r in &plan.rows {
                data.extend(c.trusted.raw_row(r));
            }
            let states = g.constant(Tensor::matrix(plan.rows.len(), c.trusted.dim(), data)?);
            let trainable = !plan.grad.is_empty();
            let bound = c.actor.bind(g, trainable);
            let out = bound.forward(g, states)?;
            if trainable {
                let coef = g.constant(coefficient_matrix(idx.len(), plan.rows.len(), &plan.grad));
                let term = g.matmul(coef, out)?;
                logits = g.add(logits, term)?;
                params.extend(bound.params(&Self::checkpoint_prefix(k)));
            }
            if !plan.fixed.is_empty() {
                let frozen = g.detach(out);
                let coef = g.constant(coefficient_matrix(idx.len(), plan.rows.len(), &plan.fixed));
                let term = g.matmul(coef, frozen)?;
                logits = g.add(logits, term)?;
            }
        }
        Ok(TrainForward { logits, values, params })
    }

    fn apply_gradients(&mut self, grads: &[(String, Tensor)], adam: &mut AdamState) -> Result<()> {
        let map: HashMap<&str, &Tensor> = grads.iter().map(|(n, t)| (n.as_str(), t)).collect();
        apply_named(&mut self.orchestra.learner, "actor", &map, adam)?;
        apply_named(&mut self.critic, "critic", &map, adam)?;
        if self.config.checkpoint_gradients {
            for (k, c) in self.orchestra.checkpoints.iter_mut().enumerate() {
                apply_named(&mut c.actor, &Self::checkpoint_prefix(k), &map, adam)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{CheckpointPolicy, TrustedStateSet};
    use super::*;
    use crate::envs::{Observation, NUM_ACTIONS, OBS_DIM};
    use crate::ppo::{collect_grads, compute_gae, ppo_loss, ppo_update, ActivationRecord, PpoConfig};
    use crate::tensor::{AdamConfig, Parameterized};
    use rand::{Rng, SeedableRng};

    fn state(k: usize) -> Vec<f64> {
        let mut v = vec![0.0; OBS_DIM];
        for j in 0..20 {
            v[(k * 37 + j * 19) % OBS_DIM] = 1.0;
        }
        v
    }

    fn with_checkpoints(seed: u64, gradients: bool) -> HopAgent {
        let mut rng = RunRng::seed_from_u64(seed);
        let mut agent = HopAgent::new(
            8,
            HopConfig {
                checkpoint_gradients: gradients,
                ..HopConfig::default()
            },
            &mut rng,
        );
        for k in 0..2 {
            let mut trusted = TrustedStateSet::new(OBS_DIM, 16);
            trusted.offer(&state(100 + k), 10.0, &mut rng).unwrap();
            let mut actor = agent.orchestra.learner.clone();
            actor.visit_mut("", &mut |_, t| t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1)));
            agent.orchestra.checkpoints.push(CheckpointPolicy {
                index: k,
                created_step: 0,
                actor,
                trusted,
                omega: 0.98,
                reward_limit: 7.5,
            });
        }
        agent
    }

    /// Four steps; only step 2 sits on checkpoint 1's trusted state.
    fn crafted_buffer(agent: &mut HopAgent, rng: &mut RunRng) -> RolloutBuffer {
        let mut b = RolloutBuffer::new(4, 1, OBS_DIM);
        for t in 0..4 {
            let s = if t == 2 { state(101) } else { state(t) };
            let x = Tensor::matrix(1, OBS_DIM, s.clone()).unwrap();
            let c = agent.act(&x, rng).unwrap().remove(0);
            let v = agent.values(&x).unwrap()[0];
            b.push(&Observation(s), c.action, [1.0, -0.5, 2.0, 0.3][t], t == 3, c.log_prob, v, c.activation).unwrap();
        }
        b.bootstrap_values = vec![0.0];
        b
    }

    #[test]
    fn only_the_activated_checkpoint_gets_gradient() {
        let mut agent = with_checkpoints(1, true);
        let mut rng = RunRng::seed_from_u64(9);
        let b = crafted_buffer(&mut agent, &mut rng);
        assert_eq!(b.activations.iter().map(ActivationRecord::count).collect::<Vec<_>>(), vec![0, 0, 1, 0]);
        assert_eq!(b.activations[2].active, vec![false, true]);
        let gae = compute_gae(&b, 0.99, 0.95).unwrap();
        let adv = gae.policy_advantages(true);
        let idx = [0, 1, 2, 3];
        let mut g = Graph::new();
        let fwd = agent.forward_train(&mut g, &b, &idx).unwrap();
        let t = ppo_loss(&mut g, &fwd, &b, &idx, &adv, &gae.returns, &PpoConfig::default()).unwrap();
        let grads = collect_grads(&g, t.loss, &fwd.params).unwrap();
        let nonzero = |p: &str| grads.iter().any(|(n, t)| n.starts_with(p) && t.data().iter().any(|&v| v != 0.0));
        assert!(nonzero("ckpt1."));
        assert!(!nonzero("ckpt0."));
        assert!(nonzero("actor."));
    }

    #[test]
    fn frozen_mode_keeps_checkpoints_bit_identical() {
        let mut agent = with_checkpoints(2, false);
        let mut rng = RunRng::seed_from_u64(3);
        let b = crafted_buffer(&mut agent, &mut rng);
        let before: Vec<Mlp> = agent.orchestra.checkpoints.iter().map(|c| c.actor.clone()).collect();
        let learner = agent.orchestra.learner.clone();
        let gae = compute_gae(&b, 0.99, 0.95).unwrap();
        let cfg = PpoConfig {
            num_steps: 4,
            num_envs: 1,
            num_minibatches: 1,
            target_kl: f64::INFINITY,
            ..PpoConfig::default()
        };
        let mut adam = AdamState::new(AdamConfig::default());
        ppo_update(&b, &gae, &mut agent, &mut adam, &cfg, &mut rng).unwrap();
        let after: Vec<Mlp> = agent.orchestra.checkpoints.iter().map(|c| c.actor.clone()).collect();
        assert_eq!(before, after);
        assert_ne!(learner, agent.orchestra.learner);
    }

    #[test]
    fn gradient_mode_moves_only_the_activated_checkpoint() {
        let mut agent = with_checkpoints(4, true);
        let mut rng = RunRng::seed_from_u64(5);
        let b = crafted_buffer(&mut agent, &mut rng);
        let before: Vec<Mlp> = agent.orchestra.checkpoints.iter().map(|c| c.actor.clone()).collect();
        let gae = compute_gae(&b, 0.99, 0.95).unwrap();
        let cfg = PpoConfig {
            num_steps: 4,
            num_envs: 1,
            num_minibatches: 1,
            target_kl: f64::INFINITY,
            ..PpoConfig::default()
        };
        let mut adam = AdamState::new(AdamConfig::default());
        ppo_update(&b, &gae, &mut agent, &mut adam, &cfg, &mut rng).unwrap();
        assert_eq!(before[0], agent.orchestra.checkpoints[0].actor);
        assert_ne!(before[1], agent.orchestra.checkpoints[1].actor);
    }

    #[test]
    fn without_activations_update_equals_plain_ppo() {
        let mut rng = RunRng::seed_from_u64(6);
        let plain = PpoAgent::new(8, &mut rng);
        let mut hop = HopAgent::from_ppo(plain.clone(), HopConfig::default());
        let mut plain = plain;
        let mut b = RolloutBuffer::new(8, 1, OBS_DIM);
        for t in 0..8 {
            b.push(&Observation(state(t)), t % NUM_ACTIONS, t as f64 * 0.1, t == 4, -2.0, 0.1, ActivationRecord::default())
                .unwrap();
        }
        b.bootstrap_values = vec![0.2];
        let gae = compute_gae(&b, 0.99, 0.95).unwrap();
        let cfg = PpoConfig {
            num_steps: 8,
            num_envs: 1,
            num_minibatches: 2,
            ..PpoConfig::default()
        };
        let (mut a1, mut a2) = (AdamState::new(AdamConfig::default()), AdamState::new(AdamConfig::default()));
        let s1 = ppo_update(&b, &gae, &mut plain, &mut a1, &cfg, &mut RunRng::seed_from_u64(1)).unwrap();
        let s2 = ppo_update(&b, &gae, &mut hop, &mut a2, &cfg, &mut RunRng::seed_from_u64(1)).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(plain.actor, hop.orchestra.learner);
        assert_eq!(plain.critic, hop.critic);
    }

    #[test]
    fn stale_activation_length_is_rejected() {
        let mut agent = with_checkpoints(7, true);
        let mut rng = RunRng::seed_from_u64(1);
        let mut b = crafted_buffer(&mut agent, &mut rng);
        b.activations[0] = ActivationRecord::none(1);
        let mut g = Graph::new();
        assert!(agent.forward_train(&mut g, &b, &[0, 1]).is_err());
    }

    #[test]
    fn learner_attributes_record_learner_log_prob() {
        let mut agent = with_checkpoints(8, true);
        agent.config.attributes = Attributes::Learner;
        let s = state(100);
        let x = Tensor::matrix(1, OBS_DIM, s).unwrap();
        let c = agent.act(&x, &mut RunRng::seed_from_u64(0)).unwrap().remove(0);
        assert_eq!(c.activation.count(), 1);
        let learner = agent.orchestra.learner.forward(&x).unwrap();
        assert_eq!(c.log_prob, log_softmax_row(learner.row(0))[c.action]);
        assert_ne!(c.logits, learner.row(0).to_vec());
    }
}
