use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{GaeOutput, PpoConfig, PpoModel, RolloutBuffer, TrainForward};
use crate::error::{contract, Error, Result};
use crate::tensor::{clip_global_norm, AdamState, Graph, Tensor, Var};
use crate::RunRng;

/// Averages over every minibatch that was applied.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub step: u64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub early_stopped: bool,
}

pub struct LossTerms {
    pub loss: Var,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Clipped surrogate, value regression and entropy bonus for rows `idx`.
pub fn ppo_loss(
    g: &mut Graph,
    fwd: &TrainForward,
    buffer: &RolloutBuffer,
    idx: &[usize],
    advantages: &[f64],
    returns: &[f64],
    config: &PpoConfig,
) -> Result<LossTerms> {
    let n = idx.len();
    let actions: Vec<usize> = idx.iter().map(|&i| buffer.actions[i]).collect();
    let old_logp: Vec<f64> = idx.iter().map(|&i| buffer.log_probs[i]).collect();

    let logp_all = g.log_softmax(fwd.logits);
    let new_logp = g.gather(logp_all, &actions)?;
    let old = g.constant(Tensor::vector(old_logp.clone()));
    let log_ratio = g.sub(new_logp, old)?;
    let ratio = g.exp(log_ratio);

    let adv = g.constant(Tensor::vector(idx.iter().map(|&i| advantages[i]).collect()));
    let neg_adv = g.neg(adv);
    let pg1 = g.mul(neg_adv, ratio)?;
    let clipped = g.clamp(ratio, 1.0 - config.clip_coef, 1.0 + config.clip_coef);
    let pg2 = g.mul(neg_adv, clipped)?;
    let pg = g.maximum(pg1, pg2)?;
    let policy_loss = g.mean(pg);

    let probs = g.exp(logp_all);
    let plogp = g.mul(probs, logp_all)?;
    let neg_entropy_rows = g.sum_rows(plogp);
    let neg_entropy = g.mean(neg_entropy_rows);

    let ret = g.constant(Tensor::matrix(n, 1, idx.iter().map(|&i| returns[i]).collect())?);
    let err = g.sub(fwd.values, ret)?;
    let sq = g.square(err);
    let v_loss_raw = if config.clip_vloss {
        let old_v = g.constant(Tensor::matrix(n, 1, idx.iter().map(|&i| buffer.values[i]).collect())?);
        let dv = g.sub(fwd.values, old_v)?;
        let dv = g.clamp(dv, -config.clip_coef, config.clip_coef);
        let v_clipped = g.add(old_v, dv)?;
        let err_c = g.sub(v_clipped, ret)?;
        let sq_c = g.square(err_c);
        let worst = g.maximum(sq, sq_c)?;
        g.mean(worst)
    } else {
        g.mean(sq)
    };
    let value_loss = g.scale(v_loss_raw, 0.5);

    let ent_term = g.scale(neg_entropy, config.ent_coef);
    let vf_term = g.scale(value_loss, config.vf_coef);
    let partial = g.add(policy_loss, ent_term)?;
    let loss = g.add(partial, vf_term)?;

    let new_vals = g.value(new_logp).data();
    let approx_kl = old_logp.iter().zip(new_vals).map(|(o, n)| o - n).sum::<f64>() / n as f64;
    let clip_fraction = g
        .value(ratio)
        .data()
        .iter()
        .filter(|r| (*r - 1.0).abs() > config.clip_coef)
        .count() as f64
        / n as f64;
    Ok(LossTerms {
        loss,
        policy_loss: g.value(policy_loss).item()?,
        value_loss: g.value(value_loss).item()?,
        entropy: -g.value(neg_entropy).item()?,
        approx_kl,
        clip_fraction,
    })
}

/// Gradients of `loss` for every trainable handle that was reached.
pub fn collect_grads(g: &Graph, loss: Var, params: &[(String, Var)]) -> Result<Vec<(String, Tensor)>> {
    let grads = g.backward(loss)?;
    Ok(params
        .iter()
        .filter_map(|(name, v)| grads.get(*v).map(|t| (name.clone(), t.clone())))
        .collect())
}

/// Runs `update_epochs` passes of shuffled minibatch updates, stopping at an
/// epoch boundary once the mean approximate KL of that epoch exceeds
/// `target_kl`.
pub fn ppo_update(
    buffer: &RolloutBuffer,
    gae: &GaeOutput,
    model: &mut dyn PpoModel,
    adam: &mut AdamState,
    config: &PpoConfig,
    rng: &mut RunRng,
) -> Result<UpdateStats> {
    contract!(
        gae.advantages.len() == buffer.len() && gae.returns.len() == buffer.len(),
        "advantages do not match the buffer"
    );
    let advantages = gae.policy_advantages(config.norm_adv);
    let batch = buffer.len();
    let mb = (batch / config.num_minibatches.max(1)).max(1);
    let mut order: Vec<usize> = (0..batch).collect();
    let mut stats = UpdateStats::default();
    let mut count = 0usize;

    for epoch in 0..config.update_epochs {
        order.shuffle(rng);
        let mut epoch_kl = 0.0;
        let mut epoch_batches = 0usize;
        for (k, idx) in order.chunks(mb).enumerate() {
            let mut g = Graph::new();
            let fwd = model.forward_train(&mut g, buffer, idx)?;
            let terms = ppo_loss(&mut g, &fwd, buffer, idx, &advantages, &gae.returns, config)?;
            let loss_value = g.value(terms.loss).item()?;
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "PPO loss {loss_value} at epoch {epoch}, minibatch {k} \
                     (policy {}, value {}, entropy {})",
                    terms.policy_loss, terms.value_loss, terms.entropy
                )));
            }
            let mut grads = collect_grads(&g, terms.loss, &fwd.params)?;
            let norm = clip_global_norm(&mut grads, config.max_grad_norm);
            model.apply_gradients(&grads, adam)?;

            stats.policy_loss += terms.policy_loss;
            stats.value_loss += terms.value_loss;
            stats.entropy += terms.entropy;
            stats.approx_kl += terms.approx_kl;
            stats.clip_fraction += terms.clip_fraction;
            stats.grad_norm += norm;
            epoch_kl += terms.approx_kl;
            epoch_batches += 1;
            count += 1;
        }
        stats.epochs = epoch + 1;
        if epoch_batches > 0 && epoch_kl / epoch_batches as f64 > config.target_kl {
            stats.early_stopped = epoch + 1 < config.update_epochs;
            break;
        }
    }
    if count > 0 {
        let c = count as f64;
        stats.policy_loss /= c;
        stats.value_loss /= c;
        stats.entropy /= c;
        stats.approx_kl /= c;
        stats.clip_fraction /= c;
        stats.grad_norm /= c;
    }
    stats.minibatches = count;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::super::{compute_gae, ActivationRecord, PpoAgent};
    use super::*;
    use crate::envs::{Observation, NUM_ACTIONS, OBS_DIM};
    use crate::tensor::{log_softmax_row, AdamConfig, Parameterized};
    use rand::{Rng, SeedableRng};

    fn random_buffer(agent: &PpoAgent, n: usize, rng: &mut RunRng) -> RolloutBuffer {
        let mut b = RolloutBuffer::new(n, 1, OBS_DIM);
        for _ in 0..n {
            let mut obs = vec![0.0; OBS_DIM];
            for _ in 0..20 {
                obs[rng.gen_range(0..OBS_DIM)] = 1.0;
            }
            let x = Tensor::matrix(1, OBS_DIM, obs.clone()).unwrap();
            let logits = agent.actor.forward(&x).unwrap();
            let action = rng.gen_range(0..NUM_ACTIONS);
            let logp = log_softmax_row(logits.row(0))[action];
            let value = agent.critic.forward(&x).unwrap().data()[0];
            b.push(&Observation(obs), action, rng.gen_range(-1.0..1.0), rng.gen_bool(0.2), logp, value, ActivationRecord::default())
                .unwrap();
        }
        b.bootstrap_values = vec![0.3];
        b
    }

    fn actor_grads(agent: &PpoAgent, b: &RolloutBuffer, adv: &[f64], cfg: &PpoConfig) -> (f64, Vec<(String, Tensor)>) {
        let idx: Vec<usize> = (0..b.len()).collect();
        let mut g = Graph::new();
        let fwd = agent.forward_train(&mut g, b, &idx).unwrap();
        let t = ppo_loss(&mut g, &fwd, b, &idx, adv, &vec![0.0; b.len()], cfg).unwrap();
        let grads = collect_grads(&g, t.loss, &fwd.params).unwrap();
        (t.policy_loss, grads.into_iter().filter(|(n, _)| n.starts_with("actor")).collect())
    }

    fn pg_only() -> PpoConfig {
        PpoConfig {
            ent_coef: 0.0,
            vf_coef: 0.0,
            ..PpoConfig::default()
        }
    }

    #[test]
    fn ratio_one_matches_log_prob_objective() {
        let mut rng = RunRng::seed_from_u64(1);
        let agent = PpoAgent::new(8, &mut rng);
        let b = random_buffer(&agent, 6, &mut rng);
        let adv: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (pl, grads) = actor_grads(&agent, &b, &adv, &pg_only());
        assert!((pl + adv.iter().sum::<f64>() / 6.0).abs() < 1e-12);

        // Oracle: gradient of -mean(A * log pi(a|s)) built directly.
        let mut g = Graph::new();
        let idx: Vec<usize> = (0..6).collect();
        let fwd = agent.forward_train(&mut g, &b, &idx).unwrap();
        let lp = g.log_softmax(fwd.logits);
        let picked = g.gather(lp, &b.actions).unwrap();
        let a = g.constant(Tensor::vector(adv.clone()));
        let w = g.mul(a, picked).unwrap();
        let m = g.mean(w);
        let obj = g.neg(m);
        let want = collect_grads(&g, obj, &fwd.params).unwrap();
        for (name, got) in &grads {
            let w = &want.iter().find(|(n, _)| n == name).unwrap().1;
            for (x, y) in got.data().iter().zip(w.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_advantages_give_zero_actor_gradient() {
        let mut rng = RunRng::seed_from_u64(2);
        let agent = PpoAgent::new(8, &mut rng);
        let b = random_buffer(&agent, 5, &mut rng);
        let (_, grads) = actor_grads(&agent, &b, &[0.0; 5], &pg_only());
        assert!(grads.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn clipped_branch_taken_above_range() {
        let mut rng = RunRng::seed_from_u64(3);
        let agent = PpoAgent::new(8, &mut rng);
        let mut b = random_buffer(&agent, 1, &mut rng);
        // Old policy made the action 1.5x less likely: ratio = 1.5.
        b.log_probs[0] -= 1.5f64.ln();
        let a = 0.8;
        let (pl, grads) = actor_grads(&agent, &b, &[a], &pg_only());
        // Two-branch hand evaluation: max(-A * 1.5, -A * 1.2) = -A * 1.2,
        // and the clipped branch is flat in the parameters.
        assert!((pl - (-a * 1.2f64).max(-a * 1.5)).abs() < 1e-12);
        assert!((pl + a * 1.2).abs() < 1e-12);
        assert!(grads.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn unclipped_objective_is_vanilla_policy_gradient() {
        let mut rng = RunRng::seed_from_u64(4);
        let agent = PpoAgent::new(6, &mut rng);
        let b = random_buffer(&agent, 4, &mut rng);
        let adv: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = PpoConfig {
            clip_coef: f64::INFINITY,
            target_kl: f64::INFINITY,
            update_epochs: 1,
            ..pg_only()
        };
        let (_, grads) = actor_grads(&agent, &b, &adv, &cfg);
        // Central differences of -mean(A * log pi) on sampled coordinates.
        let objective = |agent: &PpoAgent| {
            let x = b.obs_rows(&[0, 1, 2, 3]);
            let logits = agent.actor.forward(&x).unwrap();
            -(0..4).map(|i| adv[i] * log_softmax_row(logits.row(i))[b.actions[i]]).sum::<f64>() / 4.0
        };
        let h = 1e-6;
        for (name, grad) in &grads {
            for _ in 0..5 {
                let j = rng.gen_range(0..grad.len());
                let probe = |delta: f64| {
                    let mut a = agent.clone();
                    a.actor.visit_mut("actor", &mut |n, t| {
                        if &n == name {
                            t.data_mut()[j] += delta;
                        }
                    });
                    objective(&a)
                };
                let fd = (probe(h) - probe(-h)) / (2.0 * h);
                let an = grad.data()[j];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "{name}[{j}] fd {fd} an {an}");
            }
        }
    }

    #[test]
    fn update_changes_parameters_and_reports() {
        let mut rng = RunRng::seed_from_u64(5);
        let mut agent = PpoAgent::new(8, &mut rng);
        let b = random_buffer(&agent, 16, &mut rng);
        let gae = compute_gae(&b, 0.99, 0.95).unwrap();
        let before = agent.clone();
        let cfg = PpoConfig {
            num_steps: 16,
            num_envs: 1,
            num_minibatches: 4,
            ..PpoConfig::default()
        };
        let mut adam = AdamState::new(AdamConfig::default());
        let stats = ppo_update(&b, &gae, &mut agent, &mut adam, &cfg, &mut rng).unwrap();
        assert_ne!(before.actor, agent.actor);
        assert_ne!(before.critic, agent.critic);
        assert!(stats.minibatches >= 4);
        assert!(stats.entropy > 0.0);
        let line = serde_json::to_string(&stats).unwrap();
        assert!(line.contains("\"approx_kl\""));
    }

    #[test]
    fn kl_early_stop_at_epoch_boundary() {
        let mut rng = RunRng::seed_from_u64(6);
        let mut agent = PpoAgent::new(8, &mut rng);
        let mut b = random_buffer(&agent, 8, &mut rng);
        // Stale log-probs make the first epoch's KL estimate large.
        for lp in &mut b.log_probs {
            *lp += 1.0;
        }
        let gae = compute_gae(&b, 0.99, 0.95).unwrap();
        let cfg = PpoConfig {
            num_steps: 8,
            num_envs: 1,
            num_minibatches: 2,
            ..PpoConfig::default()
        };
        let mut adam = AdamState::new(AdamConfig::default());
        let stats = ppo_update(&b, &gae, &mut agent, &mut adam, &cfg, &mut rng).unwrap();
        assert_eq!(stats.epochs, 1);
        assert_eq!(stats.minibatches, 2);
        assert!(stats.early_stopped);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut rng = RunRng::seed_from_u64(7);
        let mut agent = PpoAgent::new(8, &mut rng);
        let b = random_buffer(&agent, 4, &mut rng);
        let mut gae = compute_gae(&b, 0.99, 0.95).unwrap();
        gae.returns[0] = f64::NAN;
        let cfg = PpoConfig {
            num_steps: 4,
            num_envs: 1,
            num_minibatches: 1,
            ..PpoConfig::default()
        };
        let mut adam = AdamState::new(AdamConfig::default());
        let err = ppo_update(&b, &gae, &mut agent, &mut adam, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
