//! Brute-force references for the influence estimates.
//!
//! Nothing here reads a training trace: every function replays training
//! from the raw data, so agreement with [`crate::influence`] is a real check.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::gbdt::{fit, leaf_value, Ensemble, LeafFormula, TrainParams, Tree};

/// Default step of the central finite differences.
pub const FD_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrainMode {
    /// Grow new trees from scratch.
    Full,
    /// Keep the reference splits and bias; refit leaf values only.
    #[serde(rename = "fixed")]
    FixedStructure,
}

impl fmt::Display for RetrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrainMode::Full => "full",
            RetrainMode::FixedStructure => "fixed",
        })
    }
}

impl FromStr for RetrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RetrainMode::Full),
            "fixed" | "fixed_structure" => Ok(RetrainMode::FixedStructure),
            other => Err(Error::InvalidParam(format!("unknown retrain mode `{other}`"))),
        }
    }
}

fn check_compatible(params: &TrainParams, reference: &Ensemble) -> Result<()> {
    let r = &reference.params;
    let same = params.n_trees == r.n_trees
        && params.depth == r.depth
        && params.learning_rate == r.learning_rate
        && params.l2_reg == r.l2_reg
        && params.loss == r.loss
        && params.formula == r.formula;
    if !same || reference.trees.len() != params.n_trees {
        return Err(Error::InvalidParam(
            "training parameters differ from the reference ensemble".into(),
        ));
    }
    Ok(())
}

/// Refits the leaf values of `reference` on `ds` with the given weights,
/// one boosting step at a time, with derivatives taken at the actual
/// intermediate predictions. Any finite weights are accepted so that
/// central differences may step slightly below zero.
fn replay(ds: &Dataset, weights: &[f64], reference: &Ensemble) -> Result<Ensemble> {
    if ds.n_features() != reference.n_features {
        return Err(Error::Dimension {
            expected: reference.n_features,
            actual: ds.n_features(),
        });
    }
    let p = &reference.params;
    let n = ds.n_rows();
    let labels = ds.labels();
    let n_leaves = 1usize << p.depth;
    let mut pred = vec![reference.bias; n];
    let mut trees = Vec::with_capacity(reference.trees.len());
    for tree in &reference.trees {
        let leaf_of: Vec<usize> = (0..n).map(|i| tree.structure.leaf_index(ds.row(i))).collect();
        let mut g_sum = vec![0.0; n_leaves];
        let mut h_sum = vec![0.0; n_leaves];
        for i in 0..n {
            let z = pred[i];
            g_sum[leaf_of[i]] += weights[i] * p.loss.grad(labels[i], z);
            h_sum[leaf_of[i]] += match p.formula {
                LeafFormula::Gradient => weights[i],
                LeafFormula::Newton => weights[i] * p.loss.hess(labels[i], z),
            };
        }
        let values: Vec<f64> = (0..n_leaves)
            .map(|l| leaf_value(g_sum[l], h_sum[l], p.l2_reg, p.learning_rate))
            .collect();
        for i in 0..n {
            pred[i] += values[leaf_of[i]];
        }
        trees.push(Tree {
            structure: tree.structure.clone(),
            leaf_values: values,
        });
    }
    Ok(Ensemble {
        params: reference.params.clone(),
        schema: reference.schema.clone(),
        n_features: reference.n_features,
        bias: reference.bias,
        trees,
    })
}

/// Leaf values of `reference` refitted on `ds` with the splits held fixed.
pub fn refit_fixed_structure(ds: &Dataset, reference: &Ensemble) -> Result<Ensemble> {
    replay(ds, ds.weights(), reference)
}

/// The model trained without row `index`.
///
/// `Full` reruns [`fit`], bias included. `FixedStructure` keeps the
/// reference splits and bias and only refits leaf values.
pub fn retrain_without(
    ds: &Dataset,
    params: &TrainParams,
    index: usize,
    mode: RetrainMode,
    reference: &Ensemble,
) -> Result<Ensemble> {
    let reduced = ds.without(index)?;
    match mode {
        RetrainMode::Full => Ok(fit(&reduced, params)?.0),
        RetrainMode::FixedStructure => {
            check_compatible(params, reference)?;
            refit_fixed_structure(&reduced, reference)
        }
    }
}

/// Fixed-structure refit with the weight of row `index` set to `new_weight`.
pub fn perturb_weight(
    ds: &Dataset,
    params: &TrainParams,
    index: usize,
    new_weight: f64,
    reference: &Ensemble,
) -> Result<Ensemble> {
    check_compatible(params, reference)?;
    refit_fixed_structure(&ds.with_weight(index, new_weight)?, reference)
}

/// Central difference of `f(model)` in the weight of row `index`, with
/// fixed-structure refits at `w - eps` and `w + eps`.
pub fn fd_weight_derivative<F>(
    ds: &Dataset,
    params: &TrainParams,
    index: usize,
    eps: f64,
    reference: &Ensemble,
    f: F,
) -> Result<f64>
where
    F: Fn(&Ensemble) -> Result<f64>,
{
    check_compatible(params, reference)?;
    ds.check_index(index)?;
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidParam(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut weights = ds.weights().to_vec();
    let w0 = weights[index];
    weights[index] = w0 + eps;
    let up = f(&replay(ds, &weights, reference)?)?;
    weights[index] = w0 - eps;
    let down = f(&replay(ds, &weights, reference)?)?;
    Ok((up - down) / (2.0 * eps))
}

/// dF(x)/dw by central differences.
pub fn fd_prediction_derivative(
    ds: &Dataset,
    params: &TrainParams,
    index: usize,
    eps: f64,
    reference: &Ensemble,
    x: &[f64],
) -> Result<f64> {
    fd_weight_derivative(ds, params, index, eps, reference, |m| m.predict(x))
}

/// dL(y, F(x))/dw by central differences.
pub fn fd_loss_derivative(
    ds: &Dataset,
    params: &TrainParams,
    index: usize,
    eps: f64,
    reference: &Ensemble,
    x: &[f64],
    y: f64,
) -> Result<f64> {
    fd_weight_derivative(ds, params, index, eps, reference, |m| {
        Ok(m.loss().value(y, m.predict(x)?))
    })
}

/// Whether any split of any tree differs. Thresholds are compared exactly.
pub fn structure_changed(a: &Ensemble, b: &Ensemble) -> Result<bool> {
    if a.trees.len() != b.trees.len() || a.params.depth != b.params.depth {
        return Err(Error::ShapeMismatch(format!(
            "ensembles have {}x{} and {}x{} (trees x depth)",
            a.trees.len(),
            a.params.depth,
            b.trees.len(),
            b.params.depth
        )));
    }
    Ok(a.trees
        .iter()
        .zip(&b.trees)
        .any(|(s, t)| s.structure.splits != t.structure.splits))
}
