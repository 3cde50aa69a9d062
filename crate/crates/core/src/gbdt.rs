//! Fixed-depth gradient boosting with a full training trace.
//!
//! Every tree is a complete binary tree of the configured depth whose
//! splits are chosen greedily level by level; leaf values come from the
//! Gradient or Newton formula. Alongside the [`Ensemble`] the trainer
//! returns a [`TrainingTrace`] with everything needed to replay leaf
//! fitting: leaf assignments, intermediate predictions, per-sample
//! derivatives and per-leaf sums.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataio::{Dataset, Schema};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::numfmt;

/// Denominators at or below this produce a zero leaf value.
pub const EPS_DEN: f64 = 1e-12;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafFormula {
    /// Negative mean gradient: `-G / sum(w)`.
    Gradient,
    /// Newton step: `-G / sum(w h)`.
    Newton,
}

impl LeafFormula {
    pub fn name(self) -> &'static str {
        match self {
            LeafFormula::Gradient => "gradient",
            LeafFormula::Newton => "newton",
        }
    }
}

impl fmt::Display for LeafFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LeafFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(LeafFormula::Gradient),
            "newton" => Ok(LeafFormula::Newton),
            other => Err(Error::InvalidParam(format!(
                "unknown leaf formula `{other}` (expected gradient or newton)"
            ))),
        }
    }
}

/// How the constant initial prediction is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasInit {
    /// Loss-minimizing constant on the weighted training labels.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub n_trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub loss: LossKind,
    pub formula: LeafFormula,
    /// Recorded for reproducibility; the trainer itself draws no random numbers.
    pub seed: u64,
    pub bias: BiasInit,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            n_trees: 100,
            depth: 6,
            learning_rate: 0.2,
            l2_reg: 0.0,
            loss: LossKind::Logloss,
            formula: LeafFormula::Newton,
            seed: 0,
            bias: BiasInit::Auto,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParam(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_reg.is_finite() && self.l2_reg >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "l2 regularization must be non-negative, got {}",
                self.l2_reg
            )));
        }
        if self.depth > 20 {
            return Err(Error::InvalidParam(format!("depth {} is too large", self.depth)));
        }
        if let BiasInit::Fixed(b) = self.bias {
            if !b.is_finite() {
                return Err(Error::InvalidParam("fixed bias must be finite".into()));
            }
        }
        Ok(())
    }
}

/// `-lr * g_sum / (h_sum + l2)`, or 0 when the denominator is degenerate.
#[inline]
pub fn leaf_value(g_sum: f64, h_sum: f64, l2_reg: f64, learning_rate: f64) -> f64 {
    let den = h_sum + l2_reg;
    if den <= EPS_DEN {
        0.0
    } else {
        -learning_rate * g_sum / den
    }
}

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

/// `x[feature] < threshold` goes left. An infinite threshold sends every
/// row left (pass-through node).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
}

impl Split {
    pub const PASS_THROUGH: Split = Split {
        feature: 0,
        threshold: f64::INFINITY,
    };

    #[inline]
    pub fn goes_left(&self, x: &[f64]) -> bool {
        self.threshold == f64::INFINITY || x[self.feature] < self.threshold
    }
}

// Serialized as `[feature, threshold]`, with `null` standing for +inf.
impl Serialize for Split {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let t = self.threshold.is_finite().then_some(self.threshold);
        (self.feature, t).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Split {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (feature, t): (usize, Option<f64>) = Deserialize::deserialize(d)?;
        Ok(Split {
            feature,
            threshold: t.unwrap_or(f64::INFINITY),
        })
    }
}

/// Complete binary tree; internal nodes in breadth-first order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeStructure {
    pub depth: usize,
    pub splits: Vec<Split>,
}

impl TreeStructure {
    pub fn n_leaves(&self) -> usize {
        1 << self.depth
    }

    /// Leaf reached by `x`; the caller guarantees `x` is long enough.
    #[inline]
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut node = 0usize;
        for _ in 0..self.depth {
            node = if self.splits[node].goes_left(x) {
                2 * node + 1
            } else {
                2 * node + 2
            };
        }
        node + 1 - self.n_leaves()
    }

    /// Checked variant of [`TreeStructure::leaf_index`].
    pub fn path(&self, x: &[f64]) -> Result<usize> {
        let need = self
            .splits
            .iter()
            .filter(|s| s.threshold.is_finite())
            .map(|s| s.feature + 1)
            .max()
            .unwrap_or(0);
        if x.len() < need {
            return Err(Error::Dimension {
                expected: need,
                actual: x.len(),
            });
        }
        Ok(self.leaf_index(x))
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if self.splits.len() != (1 << self.depth) - 1 {
            return Err(Error::InvalidData(format!(
                "tree of depth {} needs {} splits, found {}",
                self.depth,
                (1usize << self.depth) - 1,
                self.splits.len()
            )));
        }
        for s in &self.splits {
            if s.threshold.is_finite() && s.feature >= n_features {
                return Err(Error::InvalidData(format!("split on unknown feature {}", s.feature)));
            }
            if s.threshold.is_nan() || s.threshold == f64::NEG_INFINITY {
                return Err(Error::InvalidData("invalid split threshold".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    #[serde(flatten)]
    pub structure: TreeStructure,
    /// Already scaled by the learning rate.
    pub leaf_values: Vec<f64>,
}

/// Trained model: `F(x) = bias + sum_t leaf_values_t[P(x)_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub params: TrainParams,
    pub schema: Schema,
    pub n_features: usize,
    pub bias: f64,
    pub trees: Vec<Tree>,
}

impl Ensemble {
    pub fn loss(&self) -> LossKind {
        self.params.loss
    }

    pub fn n_leaves(&self) -> usize {
        1 << self.params.depth
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let mut z = self.bias;
        for tree in &self.trees {
            z += tree.leaf_values[tree.structure.leaf_index(x)];
        }
        z
    }

    /// Probability of the positive class (logloss models).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(crate::loss::sigmoid(self.predict(x)?))
    }

    /// Leaf index of `x` in every tree.
    pub fn leaf_path(&self, x: &[f64]) -> Result<Vec<u32>> {
        self.check_dim(x)?;
        Ok(self
            .trees
            .iter()
            .map(|t| t.structure.leaf_index(x) as u32)
            .collect())
    }

    /// Prediction built from a path and an alternative set of leaf values
    /// (e.g. refitted values or leaf derivatives), without the bias.
    pub fn sum_along_path(path: &[u32], values: &[Vec<f64>]) -> f64 {
        path.iter()
            .zip(values)
            .map(|(&l, v)| v[l as usize])
            .sum()
    }

    pub fn leaf_values(&self) -> Vec<Vec<f64>> {
        self.trees.iter().map(|t| t.leaf_values.clone()).collect()
    }

    /// Weighted mean loss over a dataset.
    pub fn mean_loss(&self, ds: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        let mut wsum = 0.0;
        for i in 0..ds.n_rows() {
            let z = self.predict(ds.row(i))?;
            let w = ds.weights()[i];
            total += w * self.params.loss.value(ds.labels()[i], z);
            wsum += w;
        }
        Ok(if wsum > 0.0 { total / wsum } else { 0.0 })
    }

    pub fn to_json_bytes(&self, trace: Option<&TrainingTrace>) -> Result<Vec<u8>> {
        numfmt::to_vec(&ModelDocRef {
            version: MODEL_VERSION,
            params: &self.params,
            schema: &self.schema,
            n_features: self.n_features,
            bias: self.bias,
            trees: &self.trees,
            trace,
        })
    }

    pub fn write_json<W: Write>(&self, writer: W, trace: Option<&TrainingTrace>) -> Result<()> {
        numfmt::to_writer(
            writer,
            &ModelDocRef {
                version: MODEL_VERSION,
                params: &self.params,
                schema: &self.schema,
                n_features: self.n_features,
                bias: self.bias,
                trees: &self.trees,
                trace,
            },
        )
    }

    /// Parses a model document; the trace is `None` for prediction-only files.
    pub fn from_json_slice(bytes: &[u8]) -> Result<(Ensemble, Option<TrainingTrace>)> {
        let doc: ModelDoc = serde_json::from_slice(bytes)?;
        if doc.version != MODEL_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported model version {}",
                doc.version
            )));
        }
        doc.params.validate()?;
        for tree in &doc.trees {
            if tree.structure.depth != doc.params.depth || tree.leaf_values.len() != 1 << doc.params.depth {
                return Err(Error::InvalidData("tree depth disagrees with params".into()));
            }
            tree.structure.validate(doc.n_features)?;
        }
        let ens = Ensemble {
            params: doc.params,
            schema: doc.schema,
            n_features: doc.n_features,
            bias: doc.bias,
            trees: doc.trees,
        };
        if let Some(trace) = &doc.trace {
            trace.check_against(&ens)?;
        }
        Ok((ens, doc.trace))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Ensemble, Option<TrainingTrace>)> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_slice(&bytes)
    }
}

#[derive(Serialize)]
struct ModelDocRef<'a> {
    version: u32,
    params: &'a TrainParams,
    schema: &'a Schema,
    n_features: usize,
    bias: f64,
    trees: &'a [Tree],
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<&'a TrainingTrace>,
}

#[derive(Deserialize)]
struct ModelDoc {
    version: u32,
    params: TrainParams,
    schema: Schema,
    n_features: usize,
    bias: f64,
    trees: Vec<Tree>,
    #[serde(default)]
    trace: Option<TrainingTrace>,
}

// ---------------------------------------------------------------------------
// Training trace
// ---------------------------------------------------------------------------

/// Byproducts of one boosting step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    /// Leaf of every training row (encodes the leaf member sets).
    pub leaf_of: Vec<u32>,
    /// Predictions before this step.
    pub prev_pred: Vec<f64>,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    pub third: Vec<f64>,
    /// Per leaf: sum of `w g`.
    pub grad_sum: Vec<f64>,
    /// Per leaf: sum of `w`.
    pub weight_sum: Vec<f64>,
    /// Per leaf: sum of `w h`.
    pub hess_sum: Vec<f64>,
    pub leaf_values: Vec<f64>,
    #[serde(skip)]
    member_offsets: Vec<usize>,
    #[serde(skip)]
    members: Vec<u32>,
}

impl StepTrace {
    fn index_members(&mut self, n_leaves: usize) {
        let mut counts = vec![0usize; n_leaves + 1];
        for &l in &self.leaf_of {
            counts[l as usize + 1] += 1;
        }
        for l in 0..n_leaves {
            counts[l + 1] += counts[l];
        }
        let mut fill = counts.clone();
        let mut members = vec![0u32; self.leaf_of.len()];
        for (i, &l) in self.leaf_of.iter().enumerate() {
            members[fill[l as usize]] = i as u32;
            fill[l as usize] += 1;
        }
        self.member_offsets = counts;
        self.members = members;
    }

    /// Training rows in `leaf`, ascending.
    #[inline]
    pub fn members(&self, leaf: usize) -> &[u32] {
        &self.members[self.member_offsets[leaf]..self.member_offsets[leaf + 1]]
    }

    /// The denominator sum the given formula uses.
    #[inline]
    pub fn denominator_sum(&self, formula: LeafFormula, leaf: usize) -> f64 {
        match formula {
            LeafFormula::Gradient => self.weight_sum[leaf],
            LeafFormula::Newton => self.hess_sum[leaf],
        }
    }
}

/// Everything the influence algorithms need, independent of the feature
/// matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TraceRepr")]
pub struct TrainingTrace {
    pub loss: LossKind,
    pub formula: LeafFormula,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub depth: usize,
    pub bias: f64,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
    pub steps: Vec<StepTrace>,
}

#[derive(Deserialize)]
struct TraceRepr {
    loss: LossKind,
    formula: LeafFormula,
    learning_rate: f64,
    l2_reg: f64,
    depth: usize,
    bias: f64,
    labels: Vec<f64>,
    weights: Vec<f64>,
    steps: Vec<StepTrace>,
}

impl TryFrom<TraceRepr> for TrainingTrace {
    type Error = serde_json::Error;

    fn try_from(r: TraceRepr) -> std::result::Result<Self, Self::Error> {
        let n = r.labels.len();
        let n_leaves = 1usize << r.depth.min(20);
        if r.weights.len() != n {
            return Err(serde_json::Error::custom("trace weights/labels length mismatch"));
        }
        let mut steps = r.steps;
        for (t, s) in steps.iter_mut().enumerate() {
            let per_row = [&s.prev_pred, &s.grad, &s.hess, &s.third];
            if s.leaf_of.len() != n || per_row.iter().any(|v| v.len() != n) {
                return Err(serde_json::Error::custom(format!("trace step {t}: per-row array has wrong length")));
            }
            let per_leaf = [&s.grad_sum, &s.weight_sum, &s.hess_sum, &s.leaf_values];
            if per_leaf.iter().any(|v| v.len() != n_leaves) {
                return Err(serde_json::Error::custom(format!("trace step {t}: per-leaf array has wrong length")));
            }
            if s.leaf_of.iter().any(|&l| l as usize >= n_leaves) {
                return Err(serde_json::Error::custom(format!("trace step {t}: leaf index out of range")));
            }
            s.index_members(n_leaves);
        }
        Ok(TrainingTrace {
            loss: r.loss,
            formula: r.formula,
            learning_rate: r.learning_rate,
            l2_reg: r.l2_reg,
            depth: r.depth,
            bias: r.bias,
            labels: r.labels,
            weights: r.weights,
            steps,
        })
    }
}

impl TrainingTrace {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn n_leaves(&self) -> usize {
        1 << self.depth
    }

    #[inline]
    pub fn leaf_value(&self, g_sum: f64, h_sum: f64) -> f64 {
        leaf_value(g_sum, h_sum, self.l2_reg, self.learning_rate)
    }

    /// Final training predictions `A^T`.
    pub fn final_predictions(&self) -> Vec<f64> {
        match self.steps.last() {
            Some(s) => s
                .prev_pred
                .iter()
                .zip(&s.leaf_of)
                .map(|(a, &l)| a + s.leaf_values[l as usize])
                .collect(),
            None => vec![self.bias; self.n_rows()],
        }
    }

    pub(crate) fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.n_rows() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.n_rows(),
            });
        }
        Ok(())
    }

    pub fn check_against(&self, ens: &Ensemble) -> Result<()> {
        let p = &ens.params;
        let same = self.loss == p.loss
            && self.formula == p.formula
            && self.learning_rate == p.learning_rate
            && self.l2_reg == p.l2_reg
            && self.depth == p.depth
            && self.bias == ens.bias
            && self.steps.len() == ens.trees.len();
        if !same {
            return Err(Error::InvalidData("trace does not match the model".into()));
        }
        for (s, tree) in self.steps.iter().zip(&ens.trees) {
            if s.leaf_values != tree.leaf_values {
                return Err(Error::InvalidData("trace leaf values differ from the model".into()));
            }
        }
        Ok(())
    }

    /// Confirms the training rows in `ds` are the ones this trace was built on.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.n_rows() != self.n_rows() || ds.labels() != self.labels.as_slice() || ds.weights() != self.weights.as_slice() {
            return Err(Error::InvalidData(
                "dataset labels/weights do not match the training trace".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct SplitSearch {
    /// Row order per feature, ascending by value (ties by row index).
    sorted: Vec<Vec<u32>>,
}

impl SplitSearch {
    fn new(ds: &Dataset) -> Self {
        let n = ds.n_rows();
        let sorted = (0..ds.n_features())
            .map(|f| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| ds.value(a as usize, f).total_cmp(&ds.value(b as usize, f)));
                idx
            })
            .collect();
        SplitSearch { sorted }
    }

    /// Builds one tree structure; returns it with the leaf of every row.
    fn grow(
        &self,
        ds: &Dataset,
        depth: usize,
        l2: f64,
        gw: &[f64],
        hw: &[f64],
    ) -> (TreeStructure, Vec<u32>) {
        let n = ds.n_rows();
        let mut node_of = vec![0u32; n];
        let mut splits = Vec::with_capacity((1 << depth) - 1);
        let score = |g: f64, h: f64| if h + l2 <= EPS_DEN { 0.0 } else { g * g / (h + l2) };

        for level in 0..depth {
            let width = 1usize << level;
            let mut g_tot = vec![0.0; width];
            let mut h_tot = vec![0.0; width];
            for i in 0..n {
                let k = node_of[i] as usize;
                g_tot[k] += gw[i];
                h_tot[k] += hw[i];
            }
            let parent: Vec<f64> = (0..width).map(|k| score(g_tot[k], h_tot[k])).collect();
            let mut best: Vec<Option<(f64, Split)>> = vec![None; width];

            let mut g_left = vec![0.0; width];
            let mut h_left = vec![0.0; width];
            let mut last = vec![f64::NAN; width];
            for (f, order) in self.sorted.iter().enumerate() {
                g_left.iter_mut().for_each(|v| *v = 0.0);
                h_left.iter_mut().for_each(|v| *v = 0.0);
                last.iter_mut().for_each(|v| *v = f64::NAN);
                for &r in order {
                    let r = r as usize;
                    let k = node_of[r] as usize;
                    let v = ds.value(r, f);
                    let prev = last[k];
                    if !prev.is_nan() && v > prev {
                        let mut threshold = prev + (v - prev) / 2.0;
                        if threshold <= prev {
                            threshold = v;
                        }
                        let gain = score(g_left[k], h_left[k])
                            + score(g_tot[k] - g_left[k], h_tot[k] - h_left[k])
                            - parent[k];
                        // strict comparison keeps the lowest feature, then lowest threshold
                        if best[k].is_none_or(|(b, _)| gain > b) {
                            best[k] = Some((gain, Split { feature: f, threshold }));
                        }
                    }
                    g_left[k] += gw[r];
                    h_left[k] += hw[r];
                    last[k] = v;
                }
            }

            let level_splits: Vec<Split> = best
                .into_iter()
                .map(|b| b.map_or(Split::PASS_THROUGH, |(_, s)| s))
                .collect();
            for i in 0..n {
                let k = node_of[i] as usize;
                let right = !level_splits[k].goes_left(ds.row(i));
                node_of[i] = 2 * node_of[i] + u32::from(right);
            }
            splits.extend(level_splits);
        }
        (TreeStructure { depth, splits }, node_of)
    }
}

/// Trains an ensemble and records the trace of every boosting step.
pub fn fit(ds: &Dataset, params: &TrainParams) -> Result<(Ensemble, TrainingTrace)> {
    params.validate()?;
    let loss = params.loss;
    if let Some(i) = ds.labels().iter().position(|&y| !loss.check_label(y)) {
        return Err(Error::InvalidData(format!(
            "row {i}: label {} is not valid for {loss}",
            ds.labels()[i]
        )));
    }
    let n = ds.n_rows();
    let n_leaves = 1usize << params.depth;
    let labels = ds.labels();
    let weights = ds.weights();
    let bias = match params.bias {
        BiasInit::Auto => loss.optimal_constant(labels, weights),
        BiasInit::Fixed(b) => b,
    };

    let search = SplitSearch::new(ds);
    let mut pred = vec![bias; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut steps = Vec::with_capacity(params.n_trees);
    let mut gw = vec![0.0; n];
    let mut hw = vec![0.0; n];

    for _ in 0..params.n_trees {
        let grad: Vec<f64> = (0..n).map(|i| loss.grad(labels[i], pred[i])).collect();
        let hess: Vec<f64> = (0..n).map(|i| loss.hess(labels[i], pred[i])).collect();
        let third: Vec<f64> = (0..n).map(|i| loss.third(labels[i], pred[i])).collect();
        for i in 0..n {
            gw[i] = weights[i] * grad[i];
            hw[i] = match params.formula {
                LeafFormula::Gradient => weights[i],
                LeafFormula::Newton => weights[i] * hess[i],
            };
        }

        let (structure, leaf_of) = search.grow(ds, params.depth, params.l2_reg, &gw, &hw);

        let mut step = StepTrace {
            leaf_of,
            prev_pred: pred.clone(),
            grad,
            hess,
            third,
            grad_sum: vec![0.0; n_leaves],
            weight_sum: vec![0.0; n_leaves],
            hess_sum: vec![0.0; n_leaves],
            leaf_values: vec![0.0; n_leaves],
            member_offsets: Vec::new(),
            members: Vec::new(),
        };
        step.index_members(n_leaves);
        for l in 0..n_leaves {
            let (mut g, mut w, mut h) = (0.0, 0.0, 0.0);
            for &j in step.members(l) {
                let j = j as usize;
                g += weights[j] * step.grad[j];
                w += weights[j];
                h += weights[j] * step.hess[j];
            }
            step.grad_sum[l] = g;
            step.weight_sum[l] = w;
            step.hess_sum[l] = h;
            let den = match params.formula {
                LeafFormula::Gradient => w,
                LeafFormula::Newton => h,
            };
            step.leaf_values[l] = leaf_value(g, den, params.l2_reg, params.learning_rate);
        }
        for i in 0..n {
            pred[i] += step.leaf_values[step.leaf_of[i] as usize];
        }
        trees.push(Tree {
            structure,
            leaf_values: step.leaf_values.clone(),
        });
        steps.push(step);
    }

    let ensemble = Ensemble {
        params: params.clone(),
        schema: ds.schema().clone(),
        n_features: ds.n_features(),
        bias,
        trees,
    };
    let trace = TrainingTrace {
        loss,
        formula: params.formula,
        learning_rate: params.learning_rate,
        l2_reg: params.l2_reg,
        depth: params.depth,
        bias,
        labels: labels.to_vec(),
        weights: weights.to_vec(),
        steps,
    };
    Ok((ensemble, trace))
}
