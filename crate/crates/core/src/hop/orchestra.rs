use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{hierarchical_weights, BestMatch, TrustedStateSet};
use crate::error::{contract, Result};
use crate::ppo::ActivationRecord;
use crate::tensor::{Mlp, Tensor};

/// A frozen actor and the states it is trusted on.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointPolicy {
    /// Position in the orchestra, from 0.
    pub index: usize,
    pub created_step: u64,
    pub actor: Mlp,
    pub trusted: TrustedStateSet,
    pub omega: f64,
    pub reward_limit: f64,
}

/// Which checkpoints fire for one state, and on which trusted state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivationVector {
    pub active: Vec<bool>,
    pub best: Vec<Option<BestMatch>>,
}

impl ActivationVector {
    pub fn any(&self) -> bool {
        self.active.iter().any(|&a| a)
    }

    pub fn record(&self) -> ActivationRecord {
        ActivationRecord {
            active: self.active.clone(),
            matches: self.best.iter().map(|b| b.map(|b| b.index)).collect(),
        }
    }

    fn from_record(r: &ActivationRecord) -> Self {
        Self {
            active: r.active.clone(),
            best: r
                .matches
                .iter()
                .map(|m| m.map(|index| BestMatch { index, similarity: f64::NAN }))
                .collect(),
        }
    }
}

/// Tests `state` against every checkpoint in `checkpoints`.
pub fn compute_activations(checkpoints: &[CheckpointPolicy], state: &[f64], omega: f64) -> Result<ActivationVector> {
    let mut out = ActivationVector {
        active: Vec::with_capacity(checkpoints.len()),
        best: Vec::with_capacity(checkpoints.len()),
    };
    for c in checkpoints {
        let b = c.trusted.find_most_similar(state)?;
        let on = b.similarity > omega;
        out.active.push(on);
        out.best.push(on.then_some(b));
    }
    Ok(out)
}

/// The learner plus its checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Orchestra {
    pub learner: Mlp,
    pub checkpoints: Vec<CheckpointPolicy>,
    pub omega: f64,
}

/// A state some policy in the expansion is evaluated at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateRef {
    /// Row of the query batch.
    Query(usize),
    /// Row `row` of checkpoint `set`'s trusted states.
    Trusted { set: usize, row: usize },
}

/// One summand `coef · π_node(state)` of the joined logits. `node` equals the
/// checkpoint count for the learner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub node: usize,
    pub state: StateRef,
    pub coef: f64,
}

/// Caches activations of trusted states against their older checkpoints.
pub(crate) struct NestedActivations<'a> {
    checkpoints: &'a [CheckpointPolicy],
    omega: f64,
    cache: HashMap<(usize, usize), ActivationVector>,
}

impl<'a> NestedActivations<'a> {
    pub fn new(checkpoints: &'a [CheckpointPolicy], omega: f64) -> Self {
        Self {
            checkpoints,
            omega,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, set: usize, row: usize) -> Result<&ActivationVector> {
        if !self.cache.contains_key(&(set, row)) {
            let state = self.checkpoints[set].trusted.unit_row(row);
            let a = compute_activations(&self.checkpoints[..set], &state, self.omega)?;
            self.cache.insert((set, row), a);
        }
        Ok(&self.cache[&(set, row)])
    }
}

/// Flattens the joined-policy recursion for query `q` into a weighted sum of
/// single-policy evaluations, merging repeated `(policy, state)` pairs.
///
/// The recursion only ever descends to older checkpoints, so visiting nodes
/// newest-first guarantees a pair's coefficient is complete when it is taken.
pub(crate) fn expand_with(
    nested: &mut NestedActivations<'_>,
    q: usize,
    top: &ActivationVector,
) -> Result<Vec<Term>> {
    let m = nested.checkpoints.len();
    contract!(top.active.len() == m, "activation length {} but {m} checkpoints", top.active.len());
    let mut pending: BTreeMap<(usize, StateRef), f64> = BTreeMap::new();
    pending.insert((m, StateRef::Query(q)), 1.0);
    let mut terms = Vec::new();
    while let Some(((node, state), coef)) = pending.pop_last() {
        terms.push(Term { node, state, coef });
        let act = match state {
            StateRef::Query(_) => top,
            StateRef::Trusted { set, row } => nested.get(set, row)?,
        };
        let w = hierarchical_weights(&act.active);
        for (j, b) in act.best.iter().enumerate() {
            if let Some(b) = b {
                let key = (j, StateRef::Trusted { set: j, row: b.index });
                *pending.entry(key).or_insert(0.0) += coef * w[j];
            }
        }
    }
    Ok(terms)
}

/// Terms of the joined logits for one query whose top-level activations are
/// `top`; the learner's own term comes first.
pub fn expand_terms(orchestra: &Orchestra, top: &ActivationVector) -> Result<Vec<Term>> {
    let mut nested = NestedActivations::new(&orchestra.checkpoints, orchestra.omega);
    expand_with(&mut nested, 0, top)
}

pub(crate) fn expand_record(
    nested: &mut NestedActivations<'_>,
    q: usize,
    record: &ActivationRecord,
) -> Result<Vec<Term>> {
    expand_with(nested, q, &ActivationVector::from_record(record))
}

/// Joined logits for every row of `states`, with each row's activations.
///
/// Checkpoint `m` contributes its own joined logits at its best-matching
/// trusted state, where activations of the older checkpoints are
/// recomputed against that trusted state. Evaluations are shared across
/// the whole batch.
pub fn joined_policy_logits(orchestra: &Orchestra, states: &Tensor) -> Result<(Tensor, Vec<ActivationVector>)> {
    let ck = &orchestra.checkpoints;
    let acts: Vec<ActivationVector> = (0..states.rows())
        .map(|r| compute_activations(ck, states.row(r), orchestra.omega))
        .collect::<Result<_>>()?;
    let mut logits = orchestra.learner.forward(states)?;
    if !acts.iter().any(ActivationVector::any) {
        return Ok((logits, acts));
    }
    let mut nested = NestedActivations::new(ck, orchestra.omega);
    // Per checkpoint: distinct trusted rows, and (query, column, coef) uses.
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); ck.len()];
    let mut slot: Vec<HashMap<usize, usize>> = vec![HashMap::new(); ck.len()];
    let mut uses: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); ck.len()];
    for (q, a) in acts.iter().enumerate() {
        if !a.any() {
            continue;
        }
        for t in expand_with(&mut nested, q, a)?.into_iter().skip(1) {
            let StateRef::Trusted { set, row } = t.state else { unreachable!("only the learner sees the query") };
            let col = *slot[set].entry(row).or_insert_with(|| {
                rows[set].push(row);
                rows[set].len() - 1
            });
            uses[set].push((q, col, t.coef));
        }
    }
    let width = logits.cols();
    for (k, c) in ck.iter().enumerate() {
        if rows[k].is_empty() {
            continue;
        }
        let mut data = Vec::with_capacity(rows[k].len() * c.trusted.dim());
        for &r in &rows[k] {
            data.extend(c.trusted.raw_row(r));
        }
        let out = c.actor.forward(&Tensor::matrix(rows[k].len(), c.trusted.dim(), data)?)?;
        let dst = logits.data_mut();
        for &(q, col, coef) in &uses[k] {
            for (d, &v) in dst[q * width..(q + 1) * width].iter_mut().zip(out.row(col)) {
                *d += coef * v;
            }
        }
    }
    Ok((logits, acts))
}
