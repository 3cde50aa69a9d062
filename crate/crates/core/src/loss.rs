//! Pointwise losses and their derivatives with respect to the raw prediction.
//!
//! The influence algorithms need up to the third derivative: leaf-value
//! gradients under the Newton formula differentiate a sum of second
//! derivatives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Binary cross-entropy on the logit scale, labels in {0, 1}.
    Logloss,
    /// `0.5 * (z - y)^2`.
    Squared,
}

/// Loss value and the first three derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub grad: f64,
    pub hess: f64,
    pub third: f64,
}

/// Logistic function, evaluated without overflow for any finite `z`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Logloss => "logloss",
            LossKind::Squared => "squared",
        }
    }

    /// Checked evaluation of all four quantities.
    pub fn derivatives(self, y: f64, z: f64) -> Result<Derivatives> {
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("prediction {z}")));
        }
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("label {y}")));
        }
        if self == LossKind::Logloss && y != 0.0 && y != 1.0 {
            return Err(Error::InvalidData(format!(
                "logloss label must be 0 or 1, got {y}"
            )));
        }
        Ok(Derivatives {
            value: self.value(y, z),
            grad: self.grad(y, z),
            hess: self.hess(y, z),
            third: self.third(y, z),
        })
    }

    #[inline]
    pub fn value(self, y: f64, z: f64) -> f64 {
        match self {
            // ln(1 + e^z) - y z
            LossKind::Logloss => softplus(z) - y * z,
            LossKind::Squared => 0.5 * (z - y) * (z - y),
        }
    }

    #[inline]
    pub fn grad(self, y: f64, z: f64) -> f64 {
        match self {
            LossKind::Logloss => sigmoid(z) - y,
            LossKind::Squared => z - y,
        }
    }

    #[inline]
    pub fn hess(self, _y: f64, z: f64) -> f64 {
        match self {
            LossKind::Logloss => {
                let p = sigmoid(z);
                p * (1.0 - p)
            }
            LossKind::Squared => 1.0,
        }
    }

    #[inline]
    pub fn third(self, _y: f64, z: f64) -> f64 {
        match self {
            LossKind::Logloss => {
                let p = sigmoid(z);
                p * (1.0 - p) * (1.0 - 2.0 * p)
            }
            LossKind::Squared => 0.0,
        }
    }

    /// Gradient and hessian together; saves one sigmoid for logloss.
    #[inline]
    pub fn grad_hess(self, y: f64, z: f64) -> (f64, f64) {
        match self {
            LossKind::Logloss => {
                let p = sigmoid(z);
                (p - y, p * (1.0 - p))
            }
            LossKind::Squared => (z - y, 1.0),
        }
    }

    /// Constant minimizing `sum_i w_i L(y_i, c)`.
    ///
    /// Logloss returns the logit of the weighted positive rate, clamped to
    /// [-10, 10]; squared loss the weighted mean. Zero total weight gives 0.
    pub fn optimal_constant(self, labels: &[f64], weights: &[f64]) -> f64 {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let mean = labels
            .iter()
            .zip(weights)
            .map(|(y, w)| y * w)
            .sum::<f64>()
            / total;
        match self {
            LossKind::Squared => mean,
            LossKind::Logloss => {
                let p = mean.clamp(0.0, 1.0);
                let logit = if p <= 0.0 {
                    f64::NEG_INFINITY
                } else if p >= 1.0 {
                    f64::INFINITY
                } else {
                    (p / (1.0 - p)).ln()
                };
                logit.clamp(-10.0, 10.0)
            }
        }
    }

    pub fn check_label(self, y: f64) -> bool {
        match self {
            LossKind::Logloss => y == 0.0 || y == 1.0,
            LossKind::Squared => y.is_finite(),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logloss" => Ok(LossKind::Logloss),
            "squared" => Ok(LossKind::Squared),
            other => Err(Error::InvalidParam(format!(
                "unknown loss `{other}` (expected logloss or squared)"
            ))),
        }
    }
}
