//! Categorical distributions over logits.

use rand::Rng;

use super::Tensor;
use crate::error::{contract, Error, Result};

/// Max-shifted softmax of one row.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Max-shifted log-softmax of one row.
pub fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&l| l - lse).collect()
}

/// Softmax over the last dimension of `logits`.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    contract!(
        logits.data().iter().all(|v| !v.is_nan()),
        "softmax input contains NaN"
    );
    if !logits.is_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut out = Vec::with_capacity(logits.len());
    for r in 0..logits.rows() {
        out.extend(softmax_row(logits.row(r)));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Draws an index from `probs` by inverse-CDF sampling with one uniform draw.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    contract!(!probs.is_empty(), "empty distribution");
    contract!(
        probs.iter().all(|p| p.is_finite() && *p >= 0.0),
        "distribution has negative or non-finite entries"
    );
    let total: f64 = probs.iter().sum();
    contract!(total > 0.0, "degenerate all-zero distribution");
    let u: f64 = rng.gen::<f64>() * total;
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
            cum += p;
            if u < cum {
                return Ok(i);
            }
        }
    }
    Ok(last_nonzero)
}
