use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    contract!(a.len() == b.len(), "length mismatch: {} vs {}", a.len(), b.len());
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    contract!(na > 0.0 && nb > 0.0, "cosine similarity of a zero vector");
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestMatch {
    pub index: usize,
    pub similarity: f64,
}

/// Unit-normalised states, capped by reservoir sampling.
///
/// Stored column-major (one vector per input dimension) so a sparse query
/// costs one contiguous axpy per nonzero coordinate. Each state's original
/// norm is kept so the raw state can be handed back to a policy.
#[derive(Clone, Debug, PartialEq)]
pub struct TrustedStateSet {
    dim: usize,
    cap: usize,
    columns: Vec<Vec<f64>>,
    norms: Vec<f64>,
    /// Episode return each stored state was harvested from.
    sources: Vec<f64>,
    offered: u64,
}

impl TrustedStateSet {
    pub fn new(dim: usize, cap: usize) -> Self {
        Self {
            dim,
            cap,
            columns: vec![Vec::new(); dim],
            norms: Vec::new(),
            sources: Vec::new(),
            offered: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    /// Number of states ever offered, including those not retained.
    pub fn offered(&self) -> u64 {
        self.offered
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn sources(&self) -> &[f64] {
        &self.sources
    }

    /// Offers one state harvested from an episode that returned `source`.
    /// Once full, the state replaces a uniformly chosen slot with
    /// probability `cap / offered`.
    pub fn offer<R: Rng + ?Sized>(&mut self, state: &[f64], source: f64, rng: &mut R) -> Result<()> {
        contract!(state.len() == self.dim, "state width {} != {}", state.len(), self.dim);
        let norm = state.iter().map(|v| v * v).sum::<f64>().sqrt();
        contract!(norm > 0.0, "cannot store a zero state");
        self.offered += 1;
        if self.len() < self.cap {
            for (col, &v) in self.columns.iter_mut().zip(state) {
                col.push(v / norm);
            }
            self.norms.push(norm);
            self.sources.push(source);
        } else {
            let j = rng.gen_range(0..self.offered);
            if (j as usize) < self.cap {
                let j = j as usize;
                for (col, &v) in self.columns.iter_mut().zip(state) {
                    col[j] = v / norm;
                }
                self.norms[j] = norm;
                self.sources[j] = source;
            }
        }
        Ok(())
    }

    /// Stored unit vector `i`.
    pub fn unit_row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Stored state `i` at its original scale.
    pub fn raw_row(&self, i: usize) -> Vec<f64> {
        let n = self.norms[i];
        self.columns.iter().map(|c| c[i] * n).collect()
    }

    /// Cosine similarity of `query` against every stored state.
    pub fn similarities(&self, query: &[f64]) -> Result<Vec<f64>> {
        contract!(query.len() == self.dim, "query width {} != {}", query.len(), self.dim);
        let norm = query.iter().map(|v| v * v).sum::<f64>().sqrt();
        contract!(norm > 0.0, "cosine similarity of a zero vector");
        let mut out = vec![0.0; self.len()];
        for (col, &q) in self.columns.iter().zip(query) {
            if q != 0.0 {
                let s = q / norm;
                for (o, &c) in out.iter_mut().zip(col) {
                    *o += s * c;
                }
            }
        }
        Ok(out)
    }

    /// Most similar stored state; ties go to the earliest slot.
    pub fn find_most_similar(&self, query: &[f64]) -> Result<BestMatch> {
        contract!(!self.is_empty(), "nearest-state search in an empty trusted set");
        let sims = self.similarities(query)?;
        let mut best = BestMatch {
            index: 0,
            similarity: sims[0],
        };
        for (i, &s) in sims.iter().enumerate().skip(1) {
            if s > best.similarity {
                best = BestMatch { index: i, similarity: s };
            }
        }
        Ok(best)
    }

    /// Unit rows laid out row-major.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.dim);
        for i in 0..self.len() {
            out.extend(self.columns.iter().map(|c| c[i]));
        }
        out
    }

    /// Rebuilds a set from row-major unit rows and their bookkeeping.
    pub fn from_row_major(
        dim: usize,
        cap: usize,
        rows: &[f64],
        norms: Vec<f64>,
        sources: Vec<f64>,
        offered: u64,
    ) -> Result<Self> {
        contract!(
            rows.len() == norms.len() * dim && sources.len() == norms.len() && norms.len() <= cap,
            "inconsistent trusted-set payload"
        );
        let mut columns = vec![Vec::with_capacity(norms.len()); dim];
        for row in rows.chunks(dim.max(1)) {
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Ok(Self {
            dim,
            cap,
            columns,
            norms,
            sources,
            offered,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RunRng;
    use rand::SeedableRng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 2.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((s - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn stored_rows_are_unit() {
        let mut rng = RunRng::seed_from_u64(0);
        let mut set = TrustedStateSet::new(3, 10);
        set.offer(&[3.0, 4.0, 0.0], 9.0, &mut rng).unwrap();
        let u = set.unit_row(0);
        assert!((u.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        assert_eq!(set.raw_row(0), vec![3.0, 4.0, 0.0]);
        assert!(set.offer(&[0.0; 3], 9.0, &mut rng).is_err());
    }

    #[test]
    fn finds_itself_and_prefers_equal() {
        let mut rng = RunRng::seed_from_u64(0);
        let mut set = TrustedStateSet::new(3, 10);
        set.offer(&[0.0, 1.0, 0.0], 9.0, &mut rng).unwrap();
        set.offer(&[1.0, 0.0, 1.0], 9.0, &mut rng).unwrap();
        let m = set.find_most_similar(&[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.index, 1);
        assert!((m.similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut rng = RunRng::seed_from_u64(0);
        let mut set = TrustedStateSet::new(2, 10);
        for _ in 0..3 {
            set.offer(&[1.0, 1.0], 9.0, &mut rng).unwrap();
        }
        assert_eq!(set.find_most_similar(&[2.0, 2.0]).unwrap().index, 0);
    }

    #[test]
    fn empty_set_is_contract_error() {
        assert!(TrustedStateSet::new(2, 4).find_most_similar(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn matches_exhaustive_scan() {
        use rand::Rng;
        let mut rng = RunRng::seed_from_u64(1);
        let mut set = TrustedStateSet::new(16, 2000);
        let rows: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        for r in &rows {
            set.offer(r, 9.0, &mut rng).unwrap();
        }
        for _ in 0..20 {
            let q: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (mut bi, mut bs) = (0, f64::NEG_INFINITY);
            for (i, r) in rows.iter().enumerate() {
                let s = cosine_similarity(r, &q).unwrap();
                if s > bs {
                    (bi, bs) = (i, s);
                }
            }
            let got = set.find_most_similar(&q).unwrap();
            assert_eq!(got.index, bi);
            assert!((got.similarity - bs).abs() < 1e-12);
        }
    }

    #[test]
    fn reservoir_caps_and_is_uniform() {
        // Inclusion counts of 250 offered items with cap 100 over many runs
        // should be flat: chi-square goodness of fit.
        let (offered, cap, runs) = (250usize, 100usize, 2000usize);
        let mut counts = vec![0u64; offered];
        let mut rng = RunRng::seed_from_u64(7);
        for _ in 0..runs {
            let mut set = TrustedStateSet::new(1, cap);
            for i in 0..offered {
                set.offer(&[1.0], i as f64, &mut rng).unwrap();
            }
            assert_eq!(set.len(), cap);
            for &s in set.sources() {
                counts[s as usize] += 1;
            }
        }
        let expected = (runs * cap) as f64 / offered as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // Inclusions within one run are not independent, so the statistic is
        // only approximately chi-square; a very small p-value still flags bias.
        let p = 1.0 - ChiSquared::new((offered - 1) as f64).unwrap().cdf(stat);
        assert!(p > 1e-3, "chi-square {stat}, p {p}");
    }

    #[test]
    fn row_major_round_trip() {
        let mut rng = RunRng::seed_from_u64(3);
        let mut set = TrustedStateSet::new(4, 3);
        for i in 0..5 {
            set.offer(&[1.0, i as f64, 0.0, 2.0], 8.0 + i as f64, &mut rng).unwrap();
        }
        let back = TrustedStateSet::from_row_major(
            4,
            3,
            &set.to_row_major(),
            set.norms().to_vec(),
            set.sources().to_vec(),
            set.offered(),
        )
        .unwrap();
        assert_eq!(back, set);
    }
}
