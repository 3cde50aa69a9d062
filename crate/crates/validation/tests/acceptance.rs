//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p leafinf-validation --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use leafinf::eval::{self, BenchConfig, MismatchConfig, NoiseConfig, ProxyConfig};
use leafinf::gbdt::{fit, LeafFormula, TrainParams};
use leafinf::influence::{
    fast_leaf_influence, fast_leaf_refit, leaf_influence, leaf_refit, select_update_set, Method,
};
use leafinf::oracle::{fd_prediction_derivative, retrain_without, RetrainMode};
use leafinf::{synthetic, LossKind, UpdateSetStrategy};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// `|a - b| / max(|a|, |b|)`, zero when both are zero.
fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn max_rel_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max)
}

fn random_rows(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let ds = synthetic::classification(200, 5, 0.1, 101);
    let params = TrainParams {
        n_trees: 20,
        depth: 3,
        learning_rate: 0.2,
        loss: LossKind::Logloss,
        formula: LeafFormula::Newton,
        ..Default::default()
    };
    let (ens, trace) = fit(&ds, &params).unwrap();
    let mut worst: f64 = 0.0;
    for i0 in random_rows(200, 25, 1) {
        let refit = leaf_refit(&trace, i0).unwrap();
        let oracle = retrain_without(&ds, &params, i0, RetrainMode::FixedStructure, &ens).unwrap();
        worst = worst.max(max_rel_err(&refit.leaf_values, &oracle.leaf_values()));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && secs < 60.0,
        format!("max relative leaf error {worst:.2e} over 25 rows (tol 1e-10), {secs:.2} s (limit 60 s)"),
    )
}

fn criterion_2() -> Outcome {
    let mut worst_refit: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let mut selection_ok = true;
    for (loss, formula) in [
        (LossKind::Logloss, LeafFormula::Newton),
        (LossKind::Logloss, LeafFormula::Gradient),
        (LossKind::Squared, LeafFormula::Newton),
    ] {
        let ds = match loss {
            LossKind::Logloss => synthetic::classification(200, 5, 0.1, 102),
            LossKind::Squared => synthetic::regression(200, 5, 0.3, 102),
        };
        let params = TrainParams {
            n_trees: 20,
            depth: 3,
            loss,
            formula,
            ..Default::default()
        };
        let (_, trace) = fit(&ds, &params).unwrap();
        let n_leaves = trace.n_leaves();
        for i0 in random_rows(200, 10, 2) {
            let exact = leaf_refit(&trace, i0).unwrap();
            let fast = fast_leaf_refit(&trace, i0, UpdateSetStrategy::AllPoints).unwrap();
            worst_refit = worst_refit.max(max_rel_err(&exact.leaf_values, &fast.leaf_values));
            let exact_g = leaf_influence(&trace, i0).unwrap();
            let fast_g = fast_leaf_influence(&trace, i0, UpdateSetStrategy::AllPoints).unwrap();
            worst_grad = worst_grad.max(max_rel_err(&exact_g.leaf_derivatives, &fast_g.leaf_derivatives));
            for t in 0..trace.n_steps() {
                for deltas in [&exact.deltas, &exact_g.jacobian] {
                    let a = select_update_set(&trace, UpdateSetStrategy::TopKLeaves(n_leaves), t, deltas).unwrap();
                    let b = select_update_set(&trace, UpdateSetStrategy::AllPoints, t, deltas).unwrap();
                    selection_ok &= a == b && a.indices(&trace.steps[t]) == (0..200).collect::<Vec<_>>();
                }
            }
        }
    }
    outcome(
        worst_refit <= 1e-14 && worst_grad <= 1e-14 && selection_ok,
        format!(
            "refit {worst_refit:.2e}, derivatives {worst_grad:.2e} (tol 1e-14); TopKLeaves(L) selection identical: {selection_ok}"
        ),
    )
}

fn criterion_3() -> Outcome {
    const EPS: f64 = 1e-4;
    // central differences lose about 1e-16 * |F| / EPS to roundoff
    const FLOOR: f64 = 1e-10;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut details = Vec::new();
    for loss in [LossKind::Logloss, LossKind::Squared] {
        for formula in [LeafFormula::Gradient, LeafFormula::Newton] {
            let (ds, test) = match loss {
                LossKind::Logloss => (synthetic::classification(60, 4, 0.1, 103), synthetic::classification(5, 4, 0.1, 203)),
                LossKind::Squared => (synthetic::regression(60, 4, 0.3, 103), synthetic::regression(5, 4, 0.3, 203)),
            };
            let params = TrainParams {
                n_trees: 3,
                depth: 2,
                loss,
                formula,
                ..Default::default()
            };
            let (ens, trace) = fit(&ds, &params).unwrap();
            let mut case_worst: f64 = 0.0;
            for i0 in random_rows(60, 10, 3) {
                let iv = leaf_influence(&trace, i0).unwrap();
                for k in 0..test.n_rows() {
                    let x = test.row(k);
                    let analytic = iv.prediction_derivative(&ens, x).unwrap();
                    let numeric = fd_prediction_derivative(&ds, &params, i0, EPS, &ens, x).unwrap();
                    let err = (analytic - numeric).abs();
                    if err > 1e-4 * analytic.abs().max(numeric.abs()) + FLOOR {
                        failures += 1;
                    }
                    case_worst = case_worst.max(rel_err(analytic, numeric));
                }
            }
            worst = worst.max(case_worst);
            details.push(format!("{loss}/{formula} {case_worst:.1e}"));
        }
    }
    outcome(
        failures == 0,
        format!(
            "{} of 200 pairs outside rel 1e-4 (abs floor {FLOOR:e}); worst rel {worst:.2e} [{}]",
            failures,
            details.join(", ")
        ),
    )
}

fn criterion_4() -> Outcome {
    let ds = synthetic::two_cliques(20, 104);
    let params = TrainParams {
        n_trees: 10,
        depth: 1,
        ..Default::default()
    };
    let (_, trace) = fit(&ds, &params).unwrap();
    let constant = trace.steps.iter().all(|s| s.leaf_of == trace.steps[0].leaf_of);
    let (mut refit_err, mut grad_err, mut clique_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i0 in 0..ds.n_rows() {
        let exact = leaf_refit(&trace, i0).unwrap();
        let single = fast_leaf_refit(&trace, i0, UpdateSetStrategy::SinglePoint).unwrap();
        refit_err = refit_err.max(max_rel_err(&exact.leaf_values, &single.leaf_values));
        let exact_g = leaf_influence(&trace, i0).unwrap();
        let single_g = fast_leaf_influence(&trace, i0, UpdateSetStrategy::SinglePoint).unwrap();
        grad_err = grad_err.max(max_rel_err(&exact_g.leaf_derivatives, &single_g.leaf_derivatives));
        // update set = the removed row's clique
        let clique = fast_leaf_refit(&trace, i0, UpdateSetStrategy::TopKLeaves(1)).unwrap();
        let clique_g = fast_leaf_influence(&trace, i0, UpdateSetStrategy::TopKLeaves(1)).unwrap();
        clique_err = clique_err
            .max(max_rel_err(&exact.leaf_values, &clique.leaf_values))
            .max(max_rel_err(&exact_g.leaf_derivatives, &clique_g.leaf_derivatives));
    }
    outcome(
        constant && refit_err <= 1e-12 && grad_err <= 1e-12,
        format!(
            "leaf sets constant: {constant}; SinglePoint vs exact: refit {refit_err:.2e}, derivatives {grad_err:.2e} (tol 1e-12); \
             with the clique as update set (TopKLeaves(1)): {clique_err:.2e}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let report = eval::proxy_approx_experiment(&ProxyConfig::default()).unwrap();
    let get = |m, s| report.row(m, s).unwrap();
    let all = UpdateSetStrategy::AllPoints;
    let lr_same = get(Method::LeafRefit, all).ndcg_same;
    let li = get(Method::LeafInfluence, all);
    let near_one = |v: Option<f64>| v.is_some_and(|x| (x - 1.0).abs() <= 1e-9);
    let exact_ok = near_one(lr_same) && near_one(li.ndcg_same) && near_one(li.ndcg_changed);

    let sweep = [
        UpdateSetStrategy::SinglePoint,
        UpdateSetStrategy::TopKLeaves(1),
        UpdateSetStrategy::TopKLeaves(2),
        UpdateSetStrategy::TopKLeaves(8),
        UpdateSetStrategy::AllPoints,
    ];
    let flr_same: Vec<f64> = sweep.iter().map(|&s| get(Method::FastLeafRefit, s).ndcg_same.unwrap_or(f64::NAN)).collect();
    let monotone = flr_same.windows(2).all(|w| w[1] >= w[0]);
    let flr_changed: Vec<f64> = sweep.iter().map(|&s| get(Method::FastLeafRefit, s).ndcg_changed.unwrap_or(f64::NAN)).collect();
    let fli_changed: Vec<f64> = sweep.iter().map(|&s| get(Method::FastLeafInfluence, s).ndcg_changed.unwrap_or(f64::NAN)).collect();
    let below = flr_changed.iter().zip(&fli_changed).all(|(a, b)| a < b);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    outcome(
        exact_ok && monotone && below,
        format!(
            "groups same/changed = {}/{}; LeafRefit same {:.12}, LeafInfluence same {:.12} changed {:.12}; \
             FastLeafRefit same over k=0,1,2,8,all: {}; changed FLR {} vs FLI {}",
            report.same_ids.len(),
            report.changed_ids.len(),
            lr_same.unwrap_or(f64::NAN),
            li.ndcg_same.unwrap_or(f64::NAN),
            li.ndcg_changed.unwrap_or(f64::NAN),
            fmt(&flr_same),
            fmt(&flr_changed),
            fmt(&fli_changed),
        ),
    )
}

fn criteria_6_and_7() -> (Outcome, Outcome) {
    let cfg = NoiseConfig::default();
    let report = eval::noise_experiment(&cfg).unwrap();
    let mut methods_ok = true;
    let mut parts = Vec::new();
    for spec in &cfg.methods {
        let row = report.auc_of(&spec.label()).unwrap();
        methods_ok &= row.significant == Some(true);
        parts.push(format!(
            "{} {:.3} (>{:.3})",
            row.name,
            row.auc.unwrap_or(f64::NAN),
            row.null.map_or(f64::NAN, |n| n.threshold)
        ));
    }
    let oracle = report.auc_of("oracle").and_then(|r| r.auc);
    let detector = report.auc_of("detector").and_then(|r| r.auc);
    let loo = report.auc_of("leave-one-out").and_then(|r| r.auc);
    let six = outcome(
        methods_ok && oracle == Some(1.0) && detector.is_some(),
        format!(
            "n_train {} flipped {}; {}; oracle {:?}, detector {:.3}, leave-one-out {:.3}",
            report.n_train,
            report.n_flipped,
            parts.join(", "),
            oracle,
            detector.unwrap_or(f64::NAN),
            loo.unwrap_or(f64::NAN),
        ),
    );
    let wins = report.curves.iter().filter(|c| c.dcg_influence > c.dcg_random).count();
    let rate = report.removal_win_rate.unwrap_or(0.0);
    let seven = outcome(
        report.curves.len() == 20 && rate >= 0.8,
        format!(
            "{} ranking beats random removal on {wins} of {} worst test points ({:.0}%, need 80%)",
            report.removal_method.clone().unwrap_or_default(),
            report.curves.len(),
            100.0 * rate
        ),
    );
    (six, seven)
}

fn criterion_8() -> Outcome {
    let report = eval::mismatch_experiment(&MismatchConfig::default()).unwrap();
    let f = report.filtered_group;
    let mut ok = true;
    let mut refit_seen = false;
    let mut grad_seen = false;
    let mut parts = Vec::new();
    for row in &report.rows {
        let means: Vec<f64> = row.means.iter().map(|m| m.unwrap_or(f64::NAN)).collect();
        let target = means[f];
        let lowest = target < 0.0 && means.iter().enumerate().all(|(g, &m)| g == f || target < m);
        ok &= lowest;
        refit_seen |= row.method.is_refit();
        grad_seen |= !row.method.is_refit();
        parts.push(format!(
            "{}/{} [{}]",
            row.method,
            row.strategy,
            means.iter().map(|m| format!("{m:+.4}")).collect::<Vec<_>>().join(" ")
        ));
    }
    outcome(
        ok && refit_seen && grad_seen,
        format!(
            "group order (in,filtered label) (in,other) (out,filtered label) (out,other), focus rows {}: {}",
            report.n_focus,
            parts.join("; ")
        ),
    )
}

fn criterion_9() -> Outcome {
    let cfg = BenchConfig {
        k_objects: 100,
        repeats: 5,
        ..Default::default()
    };
    let report = eval::runtime_bench(&cfg).unwrap();
    let s = |m, st| report.seconds(m, st).unwrap();
    let strategies = [
        UpdateSetStrategy::SinglePoint,
        UpdateSetStrategy::TopKLeaves(8),
        UpdateSetStrategy::AllPoints,
    ];
    let flr: Vec<f64> = strategies.iter().map(|&st| s(Method::FastLeafRefit, st)).collect();
    let fli: Vec<f64> = strategies.iter().map(|&st| s(Method::FastLeafInfluence, st)).collect();
    let ordered = flr[0] < flr[1] && flr[1] < flr[2];
    let faster = fli.iter().zip(&flr).all(|(a, b)| a < b);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{:.1}us", x * 1e6)).collect::<Vec<_>>().join(" < ");
    outcome(
        ordered && faster,
        format!(
            "n {} per-object (single, top8, all): FastLeafRefit {}; FastLeafInfluence {}; refit ordered {ordered}, influence faster {faster}",
            report.n_train,
            fmt(&flr),
            fmt(&fli)
        ),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn criterion_10() -> Outcome {
    let base = [1.5, -0.5, 3.0, 3.0, 0.0, 2.0];
    let rel_base = [2.0, 0.0, 1.0, 3.0, 1.0, 0.5];
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for n in 1..=6 {
        for perm in permutations(n) {
            let scores: Vec<f64> = perm.iter().map(|&p| base[p]).collect();
            let rel: Vec<f64> = rel_base[..n].to_vec();
            // DCG straight from the definition
            let direct: f64 = scores.iter().enumerate().map(|(r, g)| g / (r as f64 + 2.0).log2()).sum();
            worst = worst.max((eval::dcg(&scores) - direct).abs());
            for k in 1..=n {
                // position of each item when sorted by value desc, index asc
                let pos = |v: &[f64], i: usize| (0..n).filter(|&j| v[j] > v[i] || (v[j] == v[i] && j < i)).count();
                let disc = |r: usize| 1.0 / (r as f64 + 2.0).log2();
                let got: f64 = (0..n).filter(|&i| pos(&scores, i) < k).map(|i| rel[i] * disc(pos(&scores, i))).sum();
                let ideal: f64 = (0..n).filter(|&i| pos(&rel, i) < k).map(|i| rel[i] * disc(pos(&rel, i))).sum();
                let expect = if ideal == 0.0 { 1.0 } else { got / ideal };
                worst = worst.max((eval::ndcg_at_k(&scores, &rel, k).unwrap() - expect).abs());
                checked += 1;
            }
            for mask in 1..(1u32 << n).saturating_sub(1) {
                let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                let (mut num, mut den) = (0.0, 0.0);
                for i in (0..n).filter(|&i| labels[i]) {
                    for j in (0..n).filter(|&j| !labels[j]) {
                        den += 1.0;
                        num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                            std::cmp::Ordering::Greater => 1.0,
                            std::cmp::Ordering::Equal => 0.5,
                            std::cmp::Ordering::Less => 0.0,
                        };
                    }
                }
                worst = worst.max((eval::roc_auc(&scores, &labels).unwrap() - num / den).abs());
                checked += 1;
            }
        }
    }
    outcome(
        worst <= 1e-12,
        format!("{checked} NDCG/AUC cases plus DCG on every permutation up to n=6; max abs deviation {worst:.1e}"),
    )
}

fn main() -> ExitCode {
    let names = [
        "oracle equivalence (refit vs fixed-structure retraining)",
        "definitional identities",
        "gradient check against finite differences",
        "clique exactness of SinglePoint",
        "proxy ranking NDCG pattern",
        "noise detection AUC",
        "harmful-removal targeting",
        "domain-mismatch signs",
        "runtime ordering",
        "metric brute-force suite",
    ];
    let mut results = Vec::new();
    let timed = |i: usize, f: fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        report(i, names[i - 1], &o, start.elapsed().as_secs_f64());
        o
    };
    results.push(timed(1, criterion_1));
    results.push(timed(2, criterion_2));
    results.push(timed(3, criterion_3));
    results.push(timed(4, criterion_4));
    results.push(timed(5, criterion_5));
    let start = Instant::now();
    let (six, seven) = criteria_6_and_7();
    let secs = start.elapsed().as_secs_f64();
    report(6, names[5], &six, secs);
    report(7, names[6], &seven, secs);
    results.push(six);
    results.push(seven);
    results.push(timed(8, criterion_8));
    results.push(timed(9, criterion_9));
    results.push(timed(10, criterion_10));

    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.pass)
        .map(|(i, _)| i + 1)
        .collect();
    println!("acceptance: {} of 10 criteria passed", 10 - failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}

fn report(i: usize, name: &str, o: &Outcome, secs: f64) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("{tag} criterion {i:>2}: {name}: {} [{secs:.1} s]", o.detail);
}
