//! Training-sample influence for a trained ensemble, with tree structures
//! held fixed.
//!
//! Two quantities are estimated for a training row `i0`:
//!
//! * the change of every leaf value when `i0` is removed and the leaves are
//!   refitted step by step ([`leaf_refit`], [`fast_leaf_refit`]);
//! * the derivative of every leaf value with respect to the weight of `i0`
//!   ([`leaf_influence`], [`fast_leaf_influence`]), propagated through the
//!   boosting steps via the Jacobian of the intermediate predictions.
//!
//! The fast variants only propagate changes for rows in an update set
//! chosen per step by an [`UpdateSetStrategy`]. With
//! [`UpdateSetStrategy::AllPoints`] they reduce to the exact algorithms.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::gbdt::{Ensemble, LeafFormula, StepTrace, TrainingTrace, EPS_DEN};

// ---------------------------------------------------------------------------
// Update sets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum UpdateSetStrategy {
    /// Empty update set: only the removed/perturbed row's own terms.
    SinglePoint,
    /// Every training row, every step.
    AllPoints,
    /// Members of the `k` leaves with the largest accumulated absolute change.
    TopKLeaves(usize),
    /// As `TopKLeaves`, with leaf scores estimated from `m` rows sampled
    /// uniformly with replacement.
    SampledTopKLeaves { k: usize, m: usize, seed: u64 },
}

impl UpdateSetStrategy {
    pub fn validate(&self) -> Result<()> {
        if let UpdateSetStrategy::SampledTopKLeaves { m: 0, .. } = self {
            return Err(Error::InvalidParam("sample size m must be at least 1".into()));
        }
        Ok(())
    }
}

impl fmt::Display for UpdateSetStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpdateSetStrategy::SinglePoint => f.write_str("single"),
            UpdateSetStrategy::AllPoints => f.write_str("all"),
            UpdateSetStrategy::TopKLeaves(k) => write!(f, "topk:{k}"),
            UpdateSetStrategy::SampledTopKLeaves { k, m, seed } => write!(f, "sampledtopk:{k}:{m}:{seed}"),
        }
    }
}

impl FromStr for UpdateSetStrategy {
    type Err = Error;

    /// `single`, `all`, `topk:K`, `sampledtopk:K:M` or `sampledtopk:K:M:SEED`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParam(format!("unknown update-set strategy `{s}`"));
        let num = |p: &str| p.parse::<u64>().map_err(|_| bad());
        let parts: Vec<&str> = s.split(':').collect();
        let strategy = match parts.as_slice() {
            ["single"] => UpdateSetStrategy::SinglePoint,
            ["all"] => UpdateSetStrategy::AllPoints,
            ["topk", k] => UpdateSetStrategy::TopKLeaves(num(k)? as usize),
            ["sampledtopk", k, m] => UpdateSetStrategy::SampledTopKLeaves {
                k: num(k)? as usize,
                m: num(m)? as usize,
                seed: 0,
            },
            ["sampledtopk", k, m, seed] => UpdateSetStrategy::SampledTopKLeaves {
                k: num(k)? as usize,
                m: num(m)? as usize,
                seed: num(seed)?,
            },
            _ => return Err(bad()),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

impl TryFrom<String> for UpdateSetStrategy {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<UpdateSetStrategy> for String {
    fn from(s: UpdateSetStrategy) -> String {
        s.to_string()
    }
}

/// Update set of one step. Every strategy selects whole leaves, so the set
/// is stored as one flag per leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateSet {
    leaves: Vec<bool>,
}

impl UpdateSet {
    pub fn contains_leaf(&self, leaf: usize) -> bool {
        self.leaves[leaf]
    }

    pub fn selected_leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.leaves.iter().enumerate().filter(|(_, s)| **s).map(|(l, _)| l)
    }

    /// Row indices in the set, ascending.
    pub fn indices(&self, step: &StepTrace) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .selected_leaves()
            .flat_map(|l| step.members(l).iter().map(|&j| j as usize))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn size(&self, step: &StepTrace) -> usize {
        self.selected_leaves().map(|l| step.members(l).len()).sum()
    }
}

fn top_k(scores: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // descending score, ties by lower leaf index (stable sort)
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut selected = vec![false; scores.len()];
    for &l in order.iter().take(k) {
        selected[l] = true;
    }
    selected
}

/// Chooses the update set of step `t` (0-based) from the accumulated
/// changes of the previous step (`deltas`: prediction deltas for refitting,
/// Jacobian entries for derivatives).
pub fn select_update_set(
    trace: &TrainingTrace,
    strategy: UpdateSetStrategy,
    t: usize,
    deltas: &[f64],
) -> Result<UpdateSet> {
    strategy.validate()?;
    let step = trace
        .steps
        .get(t)
        .ok_or_else(|| Error::InvalidParam(format!("step {t} out of range")))?;
    if deltas.len() != trace.n_rows() {
        return Err(Error::Dimension {
            expected: trace.n_rows(),
            actual: deltas.len(),
        });
    }
    let n_leaves = trace.n_leaves();
    let leaves = match strategy {
        UpdateSetStrategy::SinglePoint => vec![false; n_leaves],
        UpdateSetStrategy::AllPoints => vec![true; n_leaves],
        UpdateSetStrategy::TopKLeaves(k) if k >= n_leaves => vec![true; n_leaves],
        UpdateSetStrategy::TopKLeaves(0) => vec![false; n_leaves],
        UpdateSetStrategy::TopKLeaves(k) => {
            let mut scores = vec![0.0; n_leaves];
            for (&l, d) in step.leaf_of.iter().zip(deltas) {
                scores[l as usize] += d.abs();
            }
            top_k(&scores, k)
        }
        UpdateSetStrategy::SampledTopKLeaves { k, .. } if k >= n_leaves => vec![true; n_leaves],
        UpdateSetStrategy::SampledTopKLeaves { k: 0, .. } => vec![false; n_leaves],
        UpdateSetStrategy::SampledTopKLeaves { k, m, seed } => {
            let n = trace.n_rows();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut scores = vec![0.0; n_leaves];
            for _ in 0..m {
                let j = rng.random_range(0..n);
                scores[step.leaf_of[j] as usize] += deltas[j].abs();
            }
            let scale = n as f64 / m as f64;
            scores.iter_mut().for_each(|s| *s *= scale);
            top_k(&scores, k)
        }
    };
    Ok(UpdateSet { leaves })
}

// ---------------------------------------------------------------------------
// Leaf refitting
// ---------------------------------------------------------------------------

/// Leaf values refitted without one training row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitResult {
    pub removed: usize,
    /// `T x L`, scaled by the learning rate like the ensemble's values.
    pub leaf_values: Vec<Vec<f64>>,
    /// Accumulated prediction change of every training row after the last step.
    pub deltas: Vec<f64>,
    /// Whether the removed row's leaf lost all of its mass at some step.
    pub emptied_leaf: bool,
}

impl RefitResult {
    /// Prediction of the refitted ensemble on `x`.
    pub fn predict(&self, ens: &Ensemble, x: &[f64]) -> Result<f64> {
        let path = ens.leaf_path(x)?;
        Ok(ens.bias + Ensemble::sum_along_path(&path, &self.leaf_values))
    }
}

/// Sums over the members of `leaf` except `removed`, with derivatives
/// recomputed at the shifted predictions `A + delta`. Rows with a zero
/// delta reuse the cached derivatives, which are bitwise the same.
fn recompute_leaf_sums(
    trace: &TrainingTrace,
    step: &StepTrace,
    leaf: usize,
    removed: usize,
    deltas: &[f64],
) -> (f64, f64) {
    let loss = trace.loss;
    let w = &trace.weights;
    let y = &trace.labels;
    let (mut g_sum, mut h_sum) = (0.0, 0.0);
    match trace.formula {
        LeafFormula::Gradient => {
            for &j in step.members(leaf) {
                let j = j as usize;
                if j == removed {
                    continue;
                }
                let g = if deltas[j] == 0.0 {
                    step.grad[j]
                } else {
                    loss.grad(y[j], step.prev_pred[j] + deltas[j])
                };
                g_sum += w[j] * g;
                h_sum += w[j];
            }
        }
        LeafFormula::Newton => {
            for &j in step.members(leaf) {
                let j = j as usize;
                if j == removed {
                    continue;
                }
                let (g, h) = if deltas[j] == 0.0 {
                    (step.grad[j], step.hess[j])
                } else {
                    loss.grad_hess(y[j], step.prev_pred[j] + deltas[j])
                };
                g_sum += w[j] * g;
                h_sum += w[j] * h;
            }
        }
    }
    (g_sum, h_sum)
}

/// Leaf value from the cached sums with only `removed`'s own terms taken out.
fn cached_leaf_without(trace: &TrainingTrace, step: &StepTrace, leaf: usize, removed: usize) -> (f64, f64) {
    let w0 = trace.weights[removed];
    let g_sum = step.grad_sum[leaf] - w0 * step.grad[removed];
    let h_sum = match trace.formula {
        LeafFormula::Gradient => step.weight_sum[leaf] - w0,
        LeafFormula::Newton => step.hess_sum[leaf] - w0 * step.hess[removed],
    };
    (g_sum, h_sum)
}

fn is_degenerate(trace: &TrainingTrace, h_sum: f64) -> bool {
    h_sum + trace.l2_reg <= EPS_DEN
}

/// New value of leaf `leaf` at step `t` when `removed` is dropped.
///
/// `update` lists the leaf members whose accumulated `deltas` are taken into
/// account; derivatives of all other members come from the trace cache.
/// When `update` covers every remaining member the sums are recomputed
/// directly.
pub fn leaf_recalc(
    trace: &TrainingTrace,
    t: usize,
    leaf: usize,
    removed: usize,
    update: &[usize],
    deltas: &[f64],
) -> Result<f64> {
    trace.check_index(removed)?;
    let step = trace
        .steps
        .get(t)
        .ok_or_else(|| Error::InvalidParam(format!("step {t} out of range")))?;
    if leaf >= trace.n_leaves() {
        return Err(Error::InvalidParam(format!("leaf {leaf} out of range")));
    }
    if deltas.len() != trace.n_rows() {
        return Err(Error::Dimension {
            expected: trace.n_rows(),
            actual: deltas.len(),
        });
    }
    let members = step.members(leaf);
    let contains = step.leaf_of[removed] as usize == leaf;
    let mut tracked: Vec<usize> = Vec::with_capacity(update.len());
    for &j in update {
        if j >= trace.n_rows() || step.leaf_of[j] as usize != leaf {
            return Err(Error::InvalidParam(format!("row {j} is not in leaf {leaf} at step {t}")));
        }
        if j != removed {
            tracked.push(j);
        }
    }
    tracked.sort_unstable();
    tracked.dedup();

    let (g_sum, h_sum) = if tracked.len() + usize::from(contains) == members.len() {
        recompute_leaf_sums(trace, step, leaf, removed, deltas)
    } else {
        let loss = trace.loss;
        let (mut g_sum, mut h_sum) = if contains {
            cached_leaf_without(trace, step, leaf, removed)
        } else {
            (step.grad_sum[leaf], step.denominator_sum(trace.formula, leaf))
        };
        for &j in &tracked {
            let y = trace.labels[j];
            let w = trace.weights[j];
            let (g, h) = loss.grad_hess(y, step.prev_pred[j] + deltas[j]);
            g_sum += w * (g - step.grad[j]);
            if trace.formula == LeafFormula::Newton {
                h_sum += w * (h - step.hess[j]);
            }
        }
        (g_sum, h_sum)
    };
    Ok(trace.leaf_value(g_sum, h_sum))
}

fn refit(trace: &TrainingTrace, removed: usize, strategy: UpdateSetStrategy) -> Result<RefitResult> {
    trace.check_index(removed)?;
    strategy.validate()?;
    let n = trace.n_rows();
    let mut deltas = vec![0.0; n];
    let mut leaf_values = Vec::with_capacity(trace.n_steps());
    let mut emptied_leaf = false;

    for (t, step) in trace.steps.iter().enumerate() {
        let selection = select_update_set(trace, strategy, t, &deltas)?;
        let own_leaf = step.leaf_of[removed] as usize;
        let mut values = step.leaf_values.clone();
        for (l, value) in values.iter_mut().enumerate() {
            let (g_sum, h_sum) = if selection.contains_leaf(l) {
                recompute_leaf_sums(trace, step, l, removed, &deltas)
            } else if l == own_leaf {
                cached_leaf_without(trace, step, l, removed)
            } else {
                // nothing in this leaf changes: cached value is exact
                continue;
            };
            if l == own_leaf && is_degenerate(trace, h_sum) {
                emptied_leaf = true;
            }
            *value = trace.leaf_value(g_sum, h_sum);
            let change = *value - step.leaf_values[l];
            if change != 0.0 {
                for &j in step.members(l) {
                    deltas[j as usize] += change;
                }
            }
        }
        leaf_values.push(values);
    }
    Ok(RefitResult {
        removed,
        leaf_values,
        deltas,
        emptied_leaf,
    })
}

/// Refits every leaf value without `removed`, recomputing all derivatives
/// at the shifted intermediate predictions of every step.
pub fn leaf_refit(trace: &TrainingTrace, removed: usize) -> Result<RefitResult> {
    refit(trace, removed, UpdateSetStrategy::AllPoints)
}

/// [`leaf_refit`] restricted to an update set per step; rows outside it are
/// assumed to keep their original predictions and cached derivatives.
pub fn fast_leaf_refit(trace: &TrainingTrace, removed: usize, strategy: UpdateSetStrategy) -> Result<RefitResult> {
    refit(trace, removed, strategy)
}

// ---------------------------------------------------------------------------
// Leaf value derivatives
// ---------------------------------------------------------------------------

/// Derivatives of leaf values and final training predictions with respect
/// to one training row's weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceVector {
    pub perturbed: usize,
    /// `T x L`: d(leaf value) / d(weight of `perturbed`), learning rate included.
    pub leaf_derivatives: Vec<Vec<f64>>,
    /// d(A_j^T) / d(weight of `perturbed`) for every training row `j`.
    pub jacobian: Vec<f64>,
}

impl InfluenceVector {
    /// dF(x)/dw: `x` routed through an ensemble whose leaves hold the derivatives.
    pub fn prediction_derivative(&self, ens: &Ensemble, x: &[f64]) -> Result<f64> {
        let path = ens.leaf_path(x)?;
        Ok(Ensemble::sum_along_path(&path, &self.leaf_derivatives))
    }
}

fn derivatives(trace: &TrainingTrace, perturbed: usize, strategy: UpdateSetStrategy) -> Result<InfluenceVector> {
    trace.check_index(perturbed)?;
    strategy.validate()?;
    let n = trace.n_rows();
    let eta = trace.learning_rate;
    let w = &trace.weights;
    let mut jacobian = vec![0.0; n];
    let mut leaf_derivatives = Vec::with_capacity(trace.n_steps());

    for (t, step) in trace.steps.iter().enumerate() {
        let selection = select_update_set(trace, strategy, t, &jacobian)?;
        let own_leaf = step.leaf_of[perturbed] as usize;
        let mut derivs = vec![0.0; trace.n_leaves()];
        for (l, d) in derivs.iter_mut().enumerate() {
            let tracked = selection.contains_leaf(l);
            if !tracked && l != own_leaf {
                continue;
            }
            let den = step.denominator_sum(trace.formula, l) + trace.l2_reg;
            if den <= EPS_DEN {
                continue;
            }
            // leaf value without the learning rate
            let raw = -step.grad_sum[l] / den;
            let mut acc = 0.0;
            if tracked {
                match trace.formula {
                    LeafFormula::Gradient => {
                        for &j in step.members(l) {
                            let j = j as usize;
                            acc += w[j] * step.hess[j] * jacobian[j];
                        }
                    }
                    LeafFormula::Newton => {
                        for &j in step.members(l) {
                            let j = j as usize;
                            acc += w[j] * (step.third[j] * raw + step.hess[j]) * jacobian[j];
                        }
                    }
                }
            }
            if l == own_leaf {
                let g0 = step.grad[perturbed];
                acc += match trace.formula {
                    LeafFormula::Gradient => raw + g0,
                    LeafFormula::Newton => step.hess[perturbed] * raw + g0,
                };
            }
            *d = -eta * acc / den;
        }
        for (l, &d) in derivs.iter().enumerate() {
            if d != 0.0 {
                for &j in step.members(l) {
                    jacobian[j as usize] += d;
                }
            }
        }
        leaf_derivatives.push(derivs);
    }
    Ok(InfluenceVector {
        perturbed,
        leaf_derivatives,
        jacobian,
    })
}

/// Exact derivatives of every leaf value with respect to the weight of
/// `perturbed`, carrying the full Jacobian of intermediate predictions.
pub fn leaf_influence(trace: &TrainingTrace, perturbed: usize) -> Result<InfluenceVector> {
    derivatives(trace, perturbed, UpdateSetStrategy::AllPoints)
}

/// [`leaf_influence`] with Jacobian entries outside the update set treated
/// as zero. The row's own term is always exact.
pub fn fast_leaf_influence(
    trace: &TrainingTrace,
    perturbed: usize,
    strategy: UpdateSetStrategy,
) -> Result<InfluenceVector> {
    derivatives(trace, perturbed, strategy)
}

// ---------------------------------------------------------------------------
// Influence on test points
// ---------------------------------------------------------------------------

/// `L(y, F(x)) - L(y, F_refit(x))`: positive when removing the row helps.
pub fn influence_loo(refit: &RefitResult, ens: &Ensemble, x: &[f64], y: f64) -> Result<f64> {
    let path = ens.leaf_path(x)?;
    let before = ens.bias + Ensemble::sum_along_path(&path, &ens.leaf_values());
    let after = ens.bias + Ensemble::sum_along_path(&path, &refit.leaf_values);
    let loss = ens.loss();
    Ok(loss.value(y, before) - loss.value(y, after))
}

/// `dL(y, F(x)) / dw`: positive when upweighting the row hurts.
pub fn influence_grad(iv: &InfluenceVector, ens: &Ensemble, x: &[f64], y: f64) -> Result<f64> {
    let z = ens.predict(x)?;
    let d = iv.prediction_derivative(ens, x)?;
    Ok(ens.loss().grad(y, z) * d)
}

/// Test rows pre-routed through the ensemble, for evaluating many
/// influence results against the same points.
#[derive(Debug, Clone)]
pub struct TestPoints {
    pub paths: Vec<Vec<u32>>,
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
}

impl TestPoints {
    pub fn new(ens: &Ensemble, test: &Dataset) -> Result<Self> {
        let mut paths = Vec::with_capacity(test.n_rows());
        let mut predictions = Vec::with_capacity(test.n_rows());
        for i in 0..test.n_rows() {
            let path = ens.leaf_path(test.row(i))?;
            predictions.push(ens.bias + path.iter().zip(&ens.trees).map(|(&l, t)| t.leaf_values[l as usize]).sum::<f64>());
            paths.push(path);
        }
        Ok(TestPoints {
            paths,
            predictions,
            labels: test.labels().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn loo(&self, ens: &Ensemble, refit: &RefitResult) -> Vec<f64> {
        let loss = ens.loss();
        (0..self.len())
            .map(|k| {
                let after = ens.bias + Ensemble::sum_along_path(&self.paths[k], &refit.leaf_values);
                loss.value(self.labels[k], self.predictions[k]) - loss.value(self.labels[k], after)
            })
            .collect()
    }

    pub fn grad(&self, ens: &Ensemble, iv: &InfluenceVector) -> Vec<f64> {
        let loss = ens.loss();
        (0..self.len())
            .map(|k| {
                let d = Ensemble::sum_along_path(&self.paths[k], &iv.leaf_derivatives);
                loss.grad(self.labels[k], self.predictions[k]) * d
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    LeafRefit,
    FastLeafRefit,
    LeafInfluence,
    FastLeafInfluence,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::LeafRefit => "leafrefit",
            Method::FastLeafRefit => "fastleafrefit",
            Method::LeafInfluence => "leafinfluence",
            Method::FastLeafInfluence => "fastleafinfluence",
        }
    }

    /// Removal-based (as opposed to derivative-based).
    pub fn is_refit(self) -> bool {
        matches!(self, Method::LeafRefit | Method::FastLeafRefit)
    }

    /// Strategy actually used: the exact methods ignore the given one.
    pub fn effective_strategy(self, strategy: UpdateSetStrategy) -> UpdateSetStrategy {
        match self {
            Method::LeafRefit | Method::LeafInfluence => UpdateSetStrategy::AllPoints,
            _ => strategy,
        }
    }

    /// Influence of training row `index` on each test point.
    pub fn influence_on(
        self,
        trace: &TrainingTrace,
        ens: &Ensemble,
        strategy: UpdateSetStrategy,
        index: usize,
        tests: &TestPoints,
    ) -> Result<Vec<f64>> {
        let strategy = self.effective_strategy(strategy);
        if self.is_refit() {
            Ok(tests.loo(ens, &refit(trace, index, strategy)?))
        } else {
            Ok(tests.grad(ens, &derivatives(trace, index, strategy)?))
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leafrefit" => Ok(Method::LeafRefit),
            "fastleafrefit" => Ok(Method::FastLeafRefit),
            "leafinfluence" => Ok(Method::LeafInfluence),
            "fastleafinfluence" => Ok(Method::FastLeafInfluence),
            other => Err(Error::InvalidParam(format!("unknown influence method `{other}`"))),
        }
    }
}

/// One row of a batch influence run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchRow {
    pub index: usize,
    pub train_id: u64,
    /// Influence on every test point.
    pub values: Vec<f64>,
    pub seconds: f64,
}

/// Influence of many training rows. `jobs = 1` runs on the calling thread,
/// `jobs = 0` on the current rayon pool, anything else on a dedicated pool
/// of that size. Output order follows `indices` regardless of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn batch_influence(
    trace: &TrainingTrace,
    ens: &Ensemble,
    method: Method,
    strategy: UpdateSetStrategy,
    indices: &[usize],
    ids: &[u64],
    tests: &TestPoints,
    jobs: usize,
) -> Result<Vec<BatchRow>> {
    let run = |&index: &usize| -> Result<BatchRow> {
        let start = Instant::now();
        let values = method.influence_on(trace, ens, strategy, index, tests)?;
        Ok(BatchRow {
            index,
            train_id: ids.get(index).copied().unwrap_or(index as u64),
            values,
            seconds: start.elapsed().as_secs_f64(),
        })
    };
    match jobs {
        1 => return indices.iter().map(run).collect(),
        0 => return indices.par_iter().map(run).collect(),
        _ => {}
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
    pool.install(|| indices.par_iter().map(run).collect())
}
