//! Ranking metrics and the experiment drivers built on them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, Dataset, RangePredicate};
use crate::error::{Error, Result};
use crate::gbdt::{fit, BiasInit, Ensemble, TrainParams, TrainingTrace};
use crate::influence::{self, batch_influence, Method, TestPoints, UpdateSetStrategy};
use crate::oracle::structure_changed;
use crate::synthetic::{self, MismatchSpec};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// `sum_r gain_r / log2(r + 1)` with ranks starting at 1.
pub fn dcg(gains: &[f64]) -> f64 {
    gains
        .iter()
        .enumerate()
        .map(|(r, g)| g / ((r + 2) as f64).log2())
        .sum()
}

/// Indices sorted by descending value; equal values keep index order.
fn rank_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// DCG of the top `k` items by score over the DCG of the top `k` by
/// relevance. `k` is capped at the number of items; an ideal DCG of 0
/// gives 1.
pub fn ndcg_at_k(scores: &[f64], relevance: &[f64], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidParam("NDCG cutoff must be at least 1".into()));
    }
    if scores.len() != relevance.len() {
        return Err(Error::Dimension {
            expected: relevance.len(),
            actual: scores.len(),
        });
    }
    let k = k.min(scores.len());
    let by_score: Vec<f64> = rank_desc(scores).into_iter().take(k).map(|i| relevance[i]).collect();
    let ideal: Vec<f64> = rank_desc(relevance).into_iter().take(k).map(|i| relevance[i]).collect();
    let best = dcg(&ideal);
    if best == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg(&by_score) / best)
}

/// `max(v - min(v), 0)`: signed proxy values as non-negative gains.
pub fn shift_to_zero(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    values.iter().map(|v| (v - min).max(0.0)).collect()
}

/// Probability that a random positive scores above a random negative,
/// ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidData("ROC-AUC needs both classes".into()));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of (1-based, tie-averaged) ranks of the positives
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end) as f64 / 2.0 + 1.0;
        let pos_in_block = order[start..=end].iter().filter(|&&i| labels[i]).count();
        pos_rank_sum += mid_rank * pos_in_block as f64;
        start = end + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC distribution under randomly permuted labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationNull {
    pub n_permutations: usize,
    pub mean: f64,
    pub std: f64,
    /// `0.5 + 3 * std`.
    pub threshold: f64,
}

pub fn permutation_null(scores: &[f64], labels: &[bool], n_permutations: usize, seed: u64) -> Result<PermutationNull> {
    if n_permutations < 2 {
        return Err(Error::InvalidParam("need at least two permutations".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = labels.to_vec();
    let mut aucs = Vec::with_capacity(n_permutations);
    for _ in 0..n_permutations {
        shuffled.shuffle(&mut rng);
        aucs.push(roc_auc(scores, &shuffled)?);
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (aucs.len() - 1) as f64;
    let std = var.sqrt();
    Ok(PermutationNull {
        n_permutations,
        mean,
        std,
        threshold: 0.5 + 3.0 * std,
    })
}

// ---------------------------------------------------------------------------
// Shared experiment plumbing
// ---------------------------------------------------------------------------

/// Where an experiment gets its rows from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Classification {
        n: usize,
        d: usize,
        #[serde(default)]
        label_noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Regression {
        n: usize,
        d: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Mismatch {
        #[serde(default)]
        spec: MismatchSpec,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        label: String,
        #[serde(default)]
        weight: Option<String>,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        Ok(match self {
            DataSource::Classification { n, d, label_noise, seed } => synthetic::classification(*n, *d, *label_noise, *seed),
            DataSource::Regression { n, d, noise, seed } => synthetic::regression(*n, *d, *noise, *seed),
            DataSource::Mismatch { spec, seed } => synthetic::mismatch(spec, *seed),
            DataSource::Csv { path, label, weight } => dataio::load_csv(path, label, weight.as_deref())?,
        })
    }
}

/// An influence method together with its update-set strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default = "all_points")]
    pub strategy: UpdateSetStrategy,
}

fn all_points() -> UpdateSetStrategy {
    UpdateSetStrategy::AllPoints
}

impl MethodSpec {
    pub fn new(method: Method, strategy: UpdateSetStrategy) -> Self {
        MethodSpec {
            method,
            strategy: method.effective_strategy(strategy),
        }
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.method, self.method.effective_strategy(self.strategy))
    }
}

/// `values[a][k]`: influence of training row `indices[a]` on test point `k`.
pub fn influence_matrix(
    trace: &TrainingTrace,
    ens: &Ensemble,
    spec: MethodSpec,
    indices: &[usize],
    tests: &TestPoints,
    jobs: usize,
) -> Result<Vec<Vec<f64>>> {
    let ids: Vec<u64> = (0..trace.n_rows() as u64).collect();
    let rows = batch_influence(trace, ens, spec.method, spec.strategy, indices, &ids, tests, jobs)?;
    Ok(rows.into_iter().map(|r| r.values).collect())
}

fn run_in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if jobs == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?
        .install(f)
}

fn test_losses(ens: &Ensemble, ds: &Dataset) -> Vec<f64> {
    let loss = ens.loss();
    (0..ds.n_rows())
        .map(|k| loss.value(ds.labels()[k], ens.predict_unchecked(ds.row(k))))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn write_json_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), report)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

// ---------------------------------------------------------------------------
// Proxy approximation (NDCG against ground-truth proxies)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    pub data: DataSource,
    pub test_fraction: f64,
    pub params: TrainParams,
    pub methods: Vec<MethodSpec>,
    pub k_ndcg: usize,
    pub sample_per_group: usize,
    /// Test points the rankings are computed for.
    pub n_test: usize,
    /// Training rows tried (with full retraining) while filling the groups.
    pub max_candidates: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        let fast = |m, s| MethodSpec::new(m, s);
        let mut methods = vec![
            fast(Method::LeafRefit, UpdateSetStrategy::AllPoints),
            fast(Method::LeafInfluence, UpdateSetStrategy::AllPoints),
        ];
        for s in [
            UpdateSetStrategy::SinglePoint,
            UpdateSetStrategy::TopKLeaves(1),
            UpdateSetStrategy::TopKLeaves(2),
            UpdateSetStrategy::TopKLeaves(8),
            UpdateSetStrategy::AllPoints,
        ] {
            methods.push(fast(Method::FastLeafRefit, s));
            methods.push(fast(Method::FastLeafInfluence, s));
        }
        ProxyConfig {
            data: DataSource::Classification {
                n: 600,
                d: 5,
                label_noise: 0.1,
                seed: 11,
            },
            test_fraction: 0.2,
            params: TrainParams {
                n_trees: 10,
                depth: 3,
                ..Default::default()
            },
            methods,
            k_ndcg: 100,
            sample_per_group: 60,
            n_test: 20,
            max_candidates: 480,
            seed: 0,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyRow {
    pub method: Method,
    pub strategy: UpdateSetStrategy,
    /// Absent when the group is empty.
    pub ndcg_same: Option<f64>,
    pub ndcg_changed: Option<f64>,
}

/// Top of one test point's ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRanking {
    pub test_index: usize,
    pub method: Method,
    pub strategy: UpdateSetStrategy,
    pub group: String,
    /// `(train_id, score)`, best first, truncated at the effective cutoff.
    pub ranked: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyReport {
    pub n_train: usize,
    pub n_test: usize,
    pub candidates_tried: usize,
    pub same_ids: Vec<u64>,
    pub changed_ids: Vec<u64>,
    pub k_same: usize,
    pub k_changed: usize,
    pub rows: Vec<ProxyRow>,
    pub rankings: Vec<TestRanking>,
}

impl ProxyReport {
    pub fn row(&self, method: Method, strategy: UpdateSetStrategy) -> Option<&ProxyRow> {
        let strategy = method.effective_strategy(strategy);
        self.rows.iter().find(|r| r.method == method && r.strategy == strategy)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json_report(path, self)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["method", "strategy", "ndcg_same", "ndcg_changed"])?;
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            w.write_record([r.method.to_string(), r.strategy.to_string(), cell(r.ndcg_same), cell(r.ndcg_changed)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn average_ndcg(values: &[Vec<f64>], truth: &[Vec<f64>], group: &[usize], n_test: usize, k: usize) -> Result<Option<f64>> {
    if group.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for t in 0..n_test {
        let scores: Vec<f64> = group.iter().map(|&a| values[a][t]).collect();
        let rel = shift_to_zero(&group.iter().map(|&a| truth[a][t]).collect::<Vec<_>>());
        total += ndcg_at_k(&scores, &rel, k)?;
    }
    Ok(Some(total / n_test as f64))
}

/// Ranks sampled training rows by each method for every test point and
/// scores the rankings with NDCG against the ground-truth proxy: full
/// retraining for removal methods, exact derivatives for the others.
/// Rows are grouped by whether full retraining without them changes any
/// split.
pub fn proxy_approx_experiment(cfg: &ProxyConfig) -> Result<ProxyReport> {
    run_in_pool(cfg.jobs, || proxy_inner(cfg))
}

fn proxy_inner(cfg: &ProxyConfig) -> Result<ProxyReport> {
    let ds = cfg.data.load()?;
    let (train, test) = dataio::train_test_split(&ds, cfg.test_fraction, cfg.seed)?;
    let test = test.select(&(0..cfg.n_test.min(test.n_rows())).collect::<Vec<_>>());
    let (ens, trace) = fit(&train, &cfg.params)?;
    let tests = TestPoints::new(&ens, &test)?;
    let n_test = test.n_rows();
    let base_losses = test_losses(&ens, &test);

    // ground truth for removal: full retraining with the bias held fixed
    let retrain_params = TrainParams {
        bias: BiasInit::Fixed(ens.bias),
        ..cfg.params.clone()
    };
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
    order.truncate(cfg.max_candidates.min(train.n_rows()));

    let mut same = Vec::new();
    let mut changed = Vec::new();
    let mut truth_loo: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut tried = 0;
    let chunk = rayon::current_num_threads().max(1) * 4;
    for batch in order.chunks(chunk) {
        if same.len() >= cfg.sample_per_group && changed.len() >= cfg.sample_per_group {
            break;
        }
        let results: Vec<Result<(bool, Vec<f64>)>> = batch
            .par_iter()
            .map(|&i| {
                let reduced = train.without(i)?;
                let (model, _) = fit(&reduced, &retrain_params)?;
                let after = test_losses(&model, &test);
                let inf = base_losses.iter().zip(&after).map(|(b, a)| b - a).collect();
                Ok((structure_changed(&ens, &model)?, inf))
            })
            .collect();
        for (&i, r) in batch.iter().zip(results) {
            tried += 1;
            let (is_changed, inf) = r?;
            let group = if is_changed { &mut changed } else { &mut same };
            if group.len() < cfg.sample_per_group {
                group.push(truth_loo.len());
                truth_loo.push((i, inf));
            }
        }
    }
    let indices: Vec<usize> = truth_loo.iter().map(|(i, _)| *i).collect();
    let truth_p1: Vec<Vec<f64>> = truth_loo.into_iter().map(|(_, v)| v).collect();
    let truth_p2 = influence_matrix(&trace, &ens, MethodSpec::new(Method::LeafInfluence, UpdateSetStrategy::AllPoints), &indices, &tests, 0)?;

    let k_same = cfg.k_ndcg.min(same.len());
    let k_changed = cfg.k_ndcg.min(changed.len());
    let mut rows = Vec::new();
    let mut rankings = Vec::new();
    for spec in &cfg.methods {
        let values = influence_matrix(&trace, &ens, *spec, &indices, &tests, 0)?;
        let truth = if spec.method.is_refit() { &truth_p1 } else { &truth_p2 };
        let strategy = spec.method.effective_strategy(spec.strategy);
        rows.push(ProxyRow {
            method: spec.method,
            strategy,
            ndcg_same: average_ndcg(&values, truth, &same, n_test, cfg.k_ndcg.max(1))?,
            ndcg_changed: average_ndcg(&values, truth, &changed, n_test, cfg.k_ndcg.max(1))?,
        });
        for (name, group, k) in [("same", &same, k_same), ("changed", &changed, k_changed)] {
            for t in 0..n_test {
                let scores: Vec<f64> = group.iter().map(|&a| values[a][t]).collect();
                let ranked = rank_desc(&scores)
                    .into_iter()
                    .take(k)
                    .map(|r| (train.ids()[indices[group[r]]], scores[r]))
                    .collect();
                rankings.push(TestRanking {
                    test_index: t,
                    method: spec.method,
                    strategy,
                    group: name.into(),
                    ranked,
                });
            }
        }
    }
    let ids = |g: &[usize]| g.iter().map(|&a| train.ids()[indices[a]]).collect();
    Ok(ProxyReport {
        n_train: train.n_rows(),
        n_test,
        candidates_tried: tried,
        same_ids: ids(&same),
        changed_ids: ids(&changed),
        k_same,
        k_changed,
        rows,
        rankings,
    })
}

// ---------------------------------------------------------------------------
// Label-noise detection and harmful-point removal
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemovalConfig {
    /// Test points with the largest loss increase caused by the noise.
    pub n_worst: usize,
    pub batch_size: usize,
    pub n_batches: usize,
    /// Method whose per-point ranking drives the removals; must be listed in
    /// the experiment's methods.
    pub method: MethodSpec,
}

impl Default for RemovalConfig {
    fn default() -> Self {
        RemovalConfig {
            n_worst: 20,
            batch_size: 10,
            n_batches: 5,
            method: MethodSpec::new(Method::LeafRefit, UpdateSetStrategy::AllPoints),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub data: DataSource,
    pub test_fraction: f64,
    pub flip_fraction: f64,
    pub params: TrainParams,
    pub methods: Vec<MethodSpec>,
    /// Also score rows by the loss change after full retraining without them.
    pub leave_one_out: bool,
    pub n_permutations: usize,
    /// Cap on test points used for mean influence (all if larger).
    pub n_test: usize,
    /// Skipped when `None`.
    pub removal: Option<RemovalConfig>,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            data: DataSource::Classification {
                n: 2500,
                d: 5,
                label_noise: 0.0,
                seed: 21,
            },
            test_fraction: 0.2,
            flip_fraction: 0.1,
            params: TrainParams {
                n_trees: 50,
                depth: 4,
                ..Default::default()
            },
            methods: vec![
                MethodSpec::new(Method::LeafRefit, UpdateSetStrategy::AllPoints),
                MethodSpec::new(Method::FastLeafRefit, UpdateSetStrategy::SinglePoint),
                MethodSpec::new(Method::FastLeafRefit, UpdateSetStrategy::TopKLeaves(2)),
                MethodSpec::new(Method::LeafInfluence, UpdateSetStrategy::AllPoints),
                MethodSpec::new(Method::FastLeafInfluence, UpdateSetStrategy::SinglePoint),
                MethodSpec::new(Method::FastLeafInfluence, UpdateSetStrategy::TopKLeaves(2)),
            ],
            leave_one_out: true,
            n_permutations: 999,
            n_test: 500,
            removal: Some(RemovalConfig::default()),
            seed: 0,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub name: String,
    /// Absent when nothing was flipped.
    pub auc: Option<f64>,
    pub null: Option<PermutationNull>,
    pub significant: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalCurve {
    pub test_index: usize,
    /// Relative loss reduction on the test point after each batch.
    pub point_influence: Vec<f64>,
    pub point_random: Vec<f64>,
    /// Relative reduction of the mean test loss after each batch.
    pub set_influence: Vec<f64>,
    pub set_random: Vec<f64>,
    pub dcg_influence: f64,
    pub dcg_random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub n_train: usize,
    pub n_test: usize,
    pub n_flipped: usize,
    pub auc: Vec<AucRow>,
    pub removal_method: Option<String>,
    pub curves: Vec<RemovalCurve>,
    /// Share of curves where influence-ordered removal has the higher DCG.
    pub removal_win_rate: Option<f64>,
}

impl NoiseReport {
    pub fn auc_of(&self, name: &str) -> Option<&AucRow> {
        self.auc.iter().find(|r| r.name == name)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json_report(path, self)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["name", "auc", "null_mean", "null_std", "threshold", "significant"])?;
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.auc {
            w.write_record([
                r.name.clone(),
                cell(r.auc),
                cell(r.null.map(|n| n.mean)),
                cell(r.null.map(|n| n.std)),
                cell(r.null.map(|n| n.threshold)),
                r.significant.map_or_else(String::new, |s| s.to_string()),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Plot data: one row per (test point, batch).
    pub fn write_curves_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["test_index", "batches_removed", "point_influence", "point_random", "set_influence", "set_random"])?;
        for c in &self.curves {
            for b in 0..c.point_influence.len() {
                w.write_record([
                    c.test_index.to_string(),
                    (b + 1).to_string(),
                    c.point_influence[b].to_string(),
                    c.point_random[b].to_string(),
                    c.set_influence[b].to_string(),
                    c.set_random[b].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn auc_row(name: String, scores: &[f64], flipped: &[bool], n_perm: usize, seed: u64) -> Result<AucRow> {
    if !flipped.iter().any(|&f| f) || flipped.iter().all(|&f| f) {
        return Ok(AucRow {
            name,
            auc: None,
            null: None,
            significant: None,
        });
    }
    let auc = roc_auc(scores, flipped)?;
    let null = permutation_null(scores, flipped, n_perm, seed)?;
    Ok(AucRow {
        name,
        auc: Some(auc),
        null: Some(null),
        significant: Some(auc > null.threshold),
    })
}

/// Relative reduction `(before - after) / before`.
fn reduction(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        0.0
    } else {
        (before - after) / before
    }
}

/// Flips labels, then (A) scores every training row by its mean influence
/// on the test set and measures how well that separates flipped rows, and
/// (B) removes the rows ranked most harmful for the worst-hit test points
/// in batches, retraining after each, against random removal.
pub fn noise_experiment(cfg: &NoiseConfig) -> Result<NoiseReport> {
    run_in_pool(cfg.jobs, || noise_inner(cfg))
}

fn noise_inner(cfg: &NoiseConfig) -> Result<NoiseReport> {
    let ds = cfg.data.load()?;
    let (clean_train, test) = dataio::train_test_split(&ds, cfg.test_fraction, cfg.seed)?;
    let test = test.select(&(0..cfg.n_test.min(test.n_rows())).collect::<Vec<_>>());
    let (train, flipped) = dataio::flip_labels(&clean_train, cfg.flip_fraction, cfg.seed.wrapping_add(1))?;
    let n = train.n_rows();
    let (ens, trace) = fit(&train, &cfg.params)?;
    let tests = TestPoints::new(&ens, &test)?;
    let all: Vec<usize> = (0..n).collect();

    let mut auc = Vec::new();
    let mut matrices = Vec::new();
    for (m, spec) in cfg.methods.iter().enumerate() {
        let values = influence_matrix(&trace, &ens, *spec, &all, &tests, 0)?;
        let scores: Vec<f64> = values.iter().map(|v| mean(v)).collect();
        auc.push(auc_row(spec.label(), &scores, &flipped, cfg.n_permutations, cfg.seed + 100 + m as u64)?);
        matrices.push(values);
    }

    let base = test_losses(&ens, &test);
    if cfg.leave_one_out {
        let scores: Vec<f64> = all
            .par_iter()
            .map(|&i| {
                let (model, _) = fit(&train.without(i)?, &cfg.params)?;
                Ok(mean(&base) - mean(&test_losses(&model, &test)))
            })
            .collect::<Result<_>>()?;
        auc.push(auc_row("leave-one-out".into(), &scores, &flipped, cfg.n_permutations, cfg.seed + 98)?);
    }
    // the model's preference for the class opposite to the observed label
    let detector: Vec<f64> = (0..n)
        .map(|i| {
            let p = crate::loss::sigmoid(ens.predict_unchecked(train.row(i)));
            if train.labels()[i] == 1.0 {
                1.0 - p
            } else {
                p
            }
        })
        .collect();
    auc.push(auc_row("detector".into(), &detector, &flipped, cfg.n_permutations, cfg.seed + 97)?);
    let oracle: Vec<f64> = flipped.iter().map(|&f| f64::from(u8::from(f))).collect();
    auc.push(auc_row("oracle".into(), &oracle, &flipped, cfg.n_permutations, cfg.seed + 96)?);

    let mut curves = Vec::new();
    let mut removal_method = None;
    if let Some(rc) = &cfg.removal {
        let spec = rc.method;
        let pos = cfg
            .methods
            .iter()
            .position(|m| m.method == spec.method && m.method.effective_strategy(m.strategy) == spec.method.effective_strategy(spec.strategy))
            .ok_or_else(|| Error::InvalidParam(format!("removal method {} is not among the experiment's methods", spec.label())))?;
        removal_method = Some(spec.label());
        let values = &matrices[pos];

        let (clean_model, _) = fit(&clean_train, &cfg.params)?;
        let clean = test_losses(&clean_model, &test);
        let degradation: Vec<f64> = base.iter().zip(&clean).map(|(b, c)| b - c).collect();
        let worst: Vec<usize> = rank_desc(&degradation).into_iter().take(rc.n_worst).collect();
        let base_mean = mean(&base);

        curves = worst
            .par_iter()
            .map(|&k| {
                let column: Vec<f64> = values.iter().map(|v| v[k]).collect();
                let by_influence = rank_desc(&column);
                let mut random = all.clone();
                random.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1000 + k as u64)));
                let curve = |order: &[usize]| -> Result<(Vec<f64>, Vec<f64>)> {
                    let mut point = Vec::with_capacity(rc.n_batches);
                    let mut set = Vec::with_capacity(rc.n_batches);
                    for b in 1..=rc.n_batches {
                        let cut = (b * rc.batch_size).min(n - 1);
                        let (model, _) = fit(&train.without_many(&order[..cut])?, &cfg.params)?;
                        let after = test_losses(&model, &test);
                        point.push(reduction(base[k], after[k]));
                        set.push(reduction(base_mean, mean(&after)));
                    }
                    Ok((point, set))
                };
                let (point_influence, set_influence) = curve(&by_influence)?;
                let (point_random, set_random) = curve(&random)?;
                Ok(RemovalCurve {
                    test_index: k,
                    dcg_influence: dcg(&point_influence),
                    dcg_random: dcg(&point_random),
                    point_influence,
                    point_random,
                    set_influence,
                    set_random,
                })
            })
            .collect::<Result<_>>()?;
    }
    let removal_win_rate = (!curves.is_empty()).then(|| {
        curves.iter().filter(|c| c.dcg_influence > c.dcg_random).count() as f64 / curves.len() as f64
    });
    Ok(NoiseReport {
        n_train: n,
        n_test: test.n_rows(),
        n_flipped: flipped.iter().filter(|&&f| f).count(),
        auc,
        removal_method,
        curves,
        removal_win_rate,
    })
}

// ---------------------------------------------------------------------------
// Domain mismatch
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MismatchConfig {
    pub data: DataSource,
    pub test_fraction: f64,
    /// Rows matching it are kept with probability `keep_fraction`.
    pub filter: RangePredicate,
    pub keep_fraction: f64,
    pub params: TrainParams,
    pub methods: Vec<MethodSpec>,
    pub sample_per_group: usize,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for MismatchConfig {
    fn default() -> Self {
        let spec = MismatchSpec::default();
        MismatchConfig {
            filter: RangePredicate {
                column: "age".into(),
                low: spec.segment.0,
                high: spec.segment.1,
                label: Some(1.0),
            },
            data: DataSource::Mismatch { spec, seed: 31 },
            test_fraction: 0.3,
            keep_fraction: 0.1,
            params: TrainParams {
                n_trees: 50,
                depth: 4,
                ..Default::default()
            },
            methods: vec![
                MethodSpec::new(Method::LeafRefit, UpdateSetStrategy::AllPoints),
                MethodSpec::new(Method::FastLeafRefit, UpdateSetStrategy::SinglePoint),
                MethodSpec::new(Method::LeafInfluence, UpdateSetStrategy::AllPoints),
                MethodSpec::new(Method::FastLeafInfluence, UpdateSetStrategy::SinglePoint),
            ],
            sample_per_group: 100,
            seed: 0,
            jobs: 0,
        }
    }
}

/// One cell of the 2x2 table: inside/outside the filter range, by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCell {
    pub in_range: bool,
    pub label: f64,
    pub available: usize,
    pub sampled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchRow {
    pub method: Method,
    pub strategy: UpdateSetStrategy,
    /// Mean influence per group (order of `MismatchReport::groups`); absent
    /// for empty groups.
    pub means: Vec<Option<f64>>,
    pub std_errors: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub n_train: usize,
    pub n_focus: usize,
    pub groups: Vec<GroupCell>,
    /// Index into `groups` of the filtered-out kind.
    pub filtered_group: usize,
    pub rows: Vec<MismatchRow>,
}

impl MismatchReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json_report(path, self)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["method", "strategy", "in_range", "label", "sampled", "mean", "std_error"])?;
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            for (g, group) in self.groups.iter().enumerate() {
                w.write_record([
                    r.method.to_string(),
                    r.strategy.to_string(),
                    group.in_range.to_string(),
                    group.label.to_string(),
                    group.sampled.to_string(),
                    cell(r.means[g]),
                    cell(r.std_errors[g]),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Drops most rows of one kind from the training data, then averages each
/// group's influence on the loss over test rows of the dropped kind.
pub fn mismatch_experiment(cfg: &MismatchConfig) -> Result<MismatchReport> {
    run_in_pool(cfg.jobs, || mismatch_inner(cfg))
}

fn mismatch_inner(cfg: &MismatchConfig) -> Result<MismatchReport> {
    let ds = cfg.data.load()?;
    let (full_train, test) = dataio::train_test_split(&ds, cfg.test_fraction, cfg.seed)?;
    let train = dataio::filter_bias(&full_train, &cfg.filter, cfg.keep_fraction, cfg.seed.wrapping_add(1))?;
    let column = cfg.filter.resolve(train.schema())?;
    let (ens, trace) = fit(&train, &cfg.params)?;

    let focus_rows: Vec<usize> = (0..test.n_rows()).filter(|&k| cfg.filter.matches(&test, column, k)).collect();
    if focus_rows.is_empty() {
        return Err(Error::InvalidData("no test rows of the filtered kind".into()));
    }
    let focus = test.select(&focus_rows);
    let tests = TestPoints::new(&ens, &focus)?;

    let filtered_label = cfg.filter.label.unwrap_or(1.0);
    let other_label = if filtered_label == 1.0 { 0.0 } else { 1.0 };
    let kinds = [(true, filtered_label), (true, other_label), (false, filtered_label), (false, other_label)];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut groups = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (in_range, label) in kinds {
        let mut rows: Vec<usize> = (0..train.n_rows())
            .filter(|&i| cfg.filter.in_range(train.value(i, column)) == in_range && train.labels()[i] == label)
            .collect();
        let available = rows.len();
        rows.shuffle(&mut rng);
        rows.truncate(cfg.sample_per_group);
        rows.sort_unstable();
        groups.push(GroupCell {
            in_range,
            label,
            available,
            sampled: rows.len(),
        });
        members.push(rows);
    }

    let mut rows = Vec::new();
    for spec in &cfg.methods {
        let mut means = Vec::new();
        let mut std_errors = Vec::new();
        for g in &members {
            if g.is_empty() {
                means.push(None);
                std_errors.push(None);
                continue;
            }
            let per_row: Vec<f64> = influence_matrix(&trace, &ens, *spec, g, &tests, 0)?
                .iter()
                .map(|v| mean(v))
                .collect();
            let m = mean(&per_row);
            let se = if per_row.len() > 1 {
                let var = per_row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (per_row.len() - 1) as f64;
                Some((var / per_row.len() as f64).sqrt())
            } else {
                None
            };
            means.push(Some(m));
            std_errors.push(se);
        }
        rows.push(MismatchRow {
            method: spec.method,
            strategy: spec.method.effective_strategy(spec.strategy),
            means,
            std_errors,
        });
    }
    Ok(MismatchReport {
        n_train: train.n_rows(),
        n_focus: focus.n_rows(),
        groups,
        filtered_group: 0,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Runtime
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub data: DataSource,
    pub params: TrainParams,
    pub methods: Vec<MethodSpec>,
    /// Training objects timed per run.
    pub k_objects: usize,
    /// Runs per method; the fastest is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let mut methods = Vec::new();
        for m in [Method::FastLeafRefit, Method::FastLeafInfluence] {
            for s in [UpdateSetStrategy::SinglePoint, UpdateSetStrategy::TopKLeaves(8), UpdateSetStrategy::AllPoints] {
                methods.push(MethodSpec::new(m, s));
            }
        }
        BenchConfig {
            data: DataSource::Classification {
                n: 2000,
                d: 5,
                label_noise: 0.1,
                seed: 41,
            },
            params: TrainParams {
                n_trees: 100,
                depth: 6,
                ..Default::default()
            },
            methods,
            k_objects: 50,
            repeats: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub strategy: UpdateSetStrategy,
    /// Fastest run, divided by the number of objects.
    pub seconds_per_object: f64,
    pub runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_train: usize,
    pub k_objects: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn seconds(&self, method: Method, strategy: UpdateSetStrategy) -> Option<f64> {
        let strategy = method.effective_strategy(strategy);
        self.rows
            .iter()
            .find(|r| r.method == method && r.strategy == strategy)
            .map(|r| r.seconds_per_object)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json_report(path, self)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["method", "strategy", "seconds_per_object"])?;
        for r in &self.rows {
            w.write_record([r.method.to_string(), r.strategy.to_string(), r.seconds_per_object.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn run_core(trace: &TrainingTrace, spec: MethodSpec, index: usize) -> Result<f64> {
    // return something derived from the output so the work is not optimized away
    let strategy = spec.method.effective_strategy(spec.strategy);
    Ok(if spec.method.is_refit() {
        influence::fast_leaf_refit(trace, index, strategy)?.deltas[index]
    } else {
        influence::fast_leaf_influence(trace, index, strategy)?.jacobian[index]
    })
}

/// Wall-clock seconds per training object of the core leaf computations,
/// on the calling thread.
pub fn runtime_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.k_objects == 0 || cfg.repeats == 0 {
        return Err(Error::InvalidParam("k_objects and repeats must be positive".into()));
    }
    let ds = cfg.data.load()?;
    let (_, trace) = fit(&ds, &cfg.params)?;
    let mut objects: Vec<usize> = (0..ds.n_rows()).collect();
    objects.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    objects.truncate(cfg.k_objects.min(ds.n_rows()));

    let mut rows = Vec::new();
    for spec in &cfg.methods {
        // warm-up
        std::hint::black_box(run_core(&trace, *spec, objects[0])?);
        let mut runs = Vec::with_capacity(cfg.repeats);
        for _ in 0..cfg.repeats {
            let start = Instant::now();
            for &i in &objects {
                std::hint::black_box(run_core(&trace, *spec, i)?);
            }
            runs.push(start.elapsed().as_secs_f64() / objects.len() as f64);
        }
        rows.push(BenchRow {
            method: spec.method,
            strategy: spec.method.effective_strategy(spec.strategy),
            seconds_per_object: runs.iter().copied().fold(f64::INFINITY, f64::min),
            runs,
        });
    }
    Ok(BenchReport {
        n_train: ds.n_rows(),
        k_objects: objects.len(),
        rows,
    })
}
