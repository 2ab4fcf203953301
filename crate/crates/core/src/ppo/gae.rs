use super::RolloutBuffer;
use crate::error::{contract, Result};

/// Advantages and value targets for one rollout, indexed like the buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct GaeOutput {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl GaeOutput {
    /// Advantages as fed to the policy loss: standardised over the whole
    /// batch when `normalize`, raw otherwise.
    pub fn policy_advantages(&self, normalize: bool) -> Vec<f64> {
        if !normalize {
            return self.advantages.clone();
        }
        let n = self.advantages.len();
        if n == 0 {
            return Vec::new();
        }
        let mean = self.advantages.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let std = var.sqrt();
        self.advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
    }
}

/// GAE(λ) with episode boundaries cutting both bootstrapping and the trace.
pub fn compute_gae(buffer: &RolloutBuffer, gamma: f64, lambda: f64) -> Result<GaeOutput> {
    contract!(buffer.is_full(), "GAE needs a full buffer with bootstrap values");
    let (t_max, n) = (buffer.num_steps, buffer.num_envs);
    let mut advantages = vec![0.0; buffer.len()];
    for e in 0..n {
        let mut running = 0.0;
        for t in (0..t_max).rev() {
            let i = t * n + e;
            let next_value = if t + 1 == t_max {
                buffer.bootstrap_values[e]
            } else {
                buffer.values[i + n]
            };
            let nonterminal = if buffer.dones[i] { 0.0 } else { 1.0 };
            let delta = buffer.rewards[i] + gamma * next_value * nonterminal - buffer.values[i];
            running = delta + gamma * lambda * nonterminal * running;
            advantages[i] = running;
        }
    }
    let returns = advantages.iter().zip(&buffer.values).map(|(a, v)| a + v).collect();
    Ok(GaeOutput {
        advantages,
        returns,
    })
}
