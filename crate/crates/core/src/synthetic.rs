//! Seeded synthetic datasets used by tests, the acceptance suite and the
//! experiment configs when no CSV is given.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Schema};
use crate::loss::sigmoid;

/// Quantized Gaussian features (steps of 0.1, so split thresholds are
/// shared by many rows) and a nonlinear logistic label.
///
/// `label_noise` is the probability of replacing a label by a fair coin.
pub fn classification(n: usize, d: usize, label_noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d)
            .map(|_| {
                let v: f64 = rng.sample(StandardNormal);
                (v * 10.0).round() / 10.0
            })
            .collect();
        let logit = signal(&x);
        let mut y = f64::from(u8::from(rng.random::<f64>() < sigmoid(logit)));
        if rng.random::<f64>() < label_noise {
            y = f64::from(rng.random_bool(0.5) as u8);
        }
        rows.push(x);
        labels.push(y);
    }
    Dataset::from_rows(&rows, labels, None).expect("synthetic rows are well formed")
}

fn signal(x: &[f64]) -> f64 {
    let at = |f: usize| x.get(f).copied().unwrap_or(0.0);
    2.0 * at(0) - 1.5 * at(1) + 1.2 * at(2) * at(3) + (2.0 * at(4)).sin()
}

/// Real-valued target `signal(x) + N(0, noise^2)` for squared loss.
pub fn regression(n: usize, d: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d)
            .map(|_| (rng.sample::<f64, _>(StandardNormal) * 10.0).round() / 10.0)
            .collect();
        let eps: f64 = rng.sample(StandardNormal);
        labels.push(signal(&x) + noise * eps);
        rows.push(x);
    }
    Dataset::from_rows(&rows, labels, None).expect("synthetic rows are well formed")
}

/// Same rows with weights drawn uniformly from [0.5, 2).
pub fn with_random_weights(ds: &Dataset, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..ds.n_rows()).map(|_| rng.random_range(0.5..2.0)).collect();
    Dataset::from_parts(
        (0..ds.n_rows()).flat_map(|i| ds.row(i).to_vec()).collect(),
        ds.n_features(),
        ds.labels().to_vec(),
        weights,
        ds.ids().to_vec(),
        ds.schema().clone(),
    )
    .expect("weights are positive")
}

/// Two groups separated on a single binary feature. With that feature as
/// the only split candidate, every tree assigns each group to its own leaf,
/// so leaf memberships are identical across boosting steps.
///
/// Labels inside each group are mixed (about `positive_rate` positive).
pub fn two_cliques(per_clique: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * per_clique);
    let mut labels = Vec::with_capacity(2 * per_clique);
    for (group, rate) in [(0.0, 0.3), (1.0, 0.7)] {
        for _ in 0..per_clique {
            rows.push(vec![group]);
            labels.push(f64::from(u8::from(rng.random::<f64>() < rate)));
        }
    }
    Dataset::from_rows(&rows, labels, None).expect("clique rows are well formed")
}

/// Layout of the domain-mismatch dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MismatchSpec {
    pub n: usize,
    pub n_other: usize,
    /// Age segment `[low, high)` whose positives get filtered.
    pub segment: (f64, f64),
    /// Positive rate inside the segment.
    pub segment_rate: f64,
    /// Positive rate outside the segment (before feature effects).
    pub base_rate: f64,
}

impl Default for MismatchSpec {
    fn default() -> Self {
        MismatchSpec {
            n: 3000,
            n_other: 3,
            segment: (40.0, 50.0),
            segment_rate: 0.35,
            base_rate: 0.15,
        }
    }
}

/// Patients with an integer `age` in [20, 80) plus a few noise-bearing
/// features; the positive rate depends on the age segment.
pub fn mismatch(spec: &MismatchSpec, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 1 + spec.n_other;
    let mut features = Vec::with_capacity(spec.n * d);
    let mut labels = Vec::with_capacity(spec.n);
    let logit = |p: f64| (p / (1.0 - p)).ln();
    for _ in 0..spec.n {
        let age = rng.random_range(20..80) as f64;
        let others: Vec<f64> = (0..spec.n_other)
            .map(|_| (rng.sample::<f64, _>(StandardNormal) * 10.0).round() / 10.0)
            .collect();
        let in_segment = age >= spec.segment.0 && age < spec.segment.1;
        let base = if in_segment { spec.segment_rate } else { spec.base_rate };
        let z = logit(base) + 0.6 * others.first().copied().unwrap_or(0.0);
        labels.push(f64::from(u8::from(rng.random::<f64>() < sigmoid(z))));
        features.push(age);
        features.extend(others);
    }
    let mut schema = Schema::numeric(d);
    schema.feature_names[0] = "age".into();
    let ids = (0..spec.n as u64).collect();
    Dataset::from_parts(features, d, labels, vec![1.0; spec.n], ids, schema)
        .expect("mismatch rows are well formed")
}
