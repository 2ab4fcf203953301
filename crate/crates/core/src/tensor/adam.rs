//! Adam with bias correction, plus global gradient-norm clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Tensor, TensorStore};
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    first: Tensor,
    second: Tensor,
    step: u64,
}

/// Per-parameter Adam moments keyed by parameter name.
///
/// Parameters are only touched when they receive a gradient, so tensors
/// that never enter a loss keep their exact values.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self, name: &str) -> u64 {
        self.moments.get(name).map_or(0, |m| m.step)
    }

    pub fn forget(&mut self, name: &str) {
        self.moments.remove(name);
    }

    /// Applies one bias-corrected update to `param`.
    pub fn step(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        contract!(
            param.shape() == grad.shape(),
            "gradient shape {:?} does not match parameter {name} {:?}",
            grad.shape(),
            param.shape()
        );
        let c = self.config;
        let m = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
            first: Tensor::zeros(param.shape()),
            second: Tensor::zeros(param.shape()),
            step: 0,
        });
        m.step += 1;
        let bc1 = 1.0 - c.beta1.powi(m.step as i32);
        let bc2 = 1.0 - c.beta2.powi(m.step as i32);
        let p = param.data_mut();
        let m1 = m.first.data_mut();
        let m2 = m.second.data_mut();
        for (i, &g) in grad.data().iter().enumerate() {
            m1[i] = c.beta1 * m1[i] + (1.0 - c.beta1) * g;
            m2[i] = c.beta2 * m2[i] + (1.0 - c.beta2) * g * g;
            let mhat = m1[i] / bc1;
            let vhat = m2[i] / bc2;
            p[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
        }
        Ok(())
    }

    pub fn to_store(&self) -> (TensorStore, BTreeMap<String, u64>) {
        let mut store = TensorStore::default();
        let mut steps = BTreeMap::new();
        for (name, m) in &self.moments {
            store.push(format!("{name}#m"), m.first.clone());
            store.push(format!("{name}#v"), m.second.clone());
            steps.insert(name.clone(), m.step);
        }
        (store, steps)
    }

    pub fn from_store(config: AdamConfig, store: &TensorStore, steps: &BTreeMap<String, u64>) -> Result<Self> {
        let mut moments = BTreeMap::new();
        for (name, &step) in steps {
            let first = store.get(&format!("{name}#m"))?.clone();
            let second = store.get(&format!("{name}#v"))?.clone();
            moments.insert(name.clone(), Moments { first, second, step });
        }
        Ok(Self { config, moments })
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [(String, Tensor)], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt();
    if max_norm.is_finite() && norm > max_norm {
        let s = max_norm / (norm + 1e-6);
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
