/// `W_m = I_m / (1 + Σ_{k≥m} I_k)`: zero for inactive checkpoints, and
/// larger for later ones.
pub fn hierarchical_weights(active: &[bool]) -> Vec<f64> {
    let mut w = vec![0.0; active.len()];
    let mut suffix = 0usize;
    for m in (0..active.len()).rev() {
        if active[m] {
            suffix += 1;
            w[m] = 1.0 / (1 + suffix) as f64;
        }
    }
    w
}
