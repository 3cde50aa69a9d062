use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use leafinf::dataio::write_csv;
use leafinf::synthetic;
use tempfile::TempDir;

fn leafinf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leafinf"))
        .args(args)
        .env_remove("LEAFINF_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = leafinf(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        write_csv(dir.path().join("train.csv"), &synthetic::classification(120, 3, 0.1, 1), None).unwrap();
        write_csv(dir.path().join("test.csv"), &synthetic::classification(10, 3, 0.1, 2), None).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn train(&self, out: &str, extra: &[&str]) {
        let (data, out) = (self.s("train.csv"), self.s(out));
        let mut args = vec!["train", "--data", &data, "--label-col", "label", "--trees", "8", "--depth", "3", "--out", &out];
        args.extend_from_slice(extra);
        ok(&args);
    }

    fn influence(&self, method: &str, strategy: &str, ids: &str, out: &str, jobs: &str) -> Vec<(u64, f64)> {
        let (model, test, out) = (self.s("model.json"), self.s("test.csv"), self.s(out));
        let mut args = vec![
            "influence", "--model", &model, "--method", method, "--strategy", strategy, "--test-data", &test, "--out", &out,
            "--jobs", jobs,
        ];
        if !ids.is_empty() {
            args.extend_from_slice(&["--train-ids", ids]);
        }
        ok(&args);
        read_values(Path::new(&out), "influence_value")
    }

    fn oracle(&self, mode: &[&str], id: &str, out: &str) -> f64 {
        let (model, data, test, out_path) = (self.s("model.json"), self.s("train.csv"), self.s("test.csv"), self.s(out));
        let mut args = vec!["oracle"];
        args.extend_from_slice(mode);
        args.extend_from_slice(&["--model", &model, "--data", &data, "--train-id", id, "--test-data", &test, "--out", &out_path]);
        ok(&args);
        read_values(&self.path(out), "influence_value")[0].1
    }
}

fn read_values(path: &Path, column: &str) -> Vec<(u64, f64)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == column).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].parse().unwrap(), rec[col].parse().unwrap())
        })
        .collect()
}

fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + abs
}

#[test]
fn pipeline_matches_oracles() {
    let fx = Fixture::new();
    fx.train("model.json", &[]);
    let refit = fx.influence("leafrefit", "all", "7,3,50", "refit.csv", "1");
    assert_eq!(refit.iter().map(|r| r.0).collect::<Vec<_>>(), vec![3, 7, 50]);
    let grad = fx.influence("leafinfluence", "all", "3,7,50", "grad.csv", "1");
    for (k, id) in ["3", "7", "50"].into_iter().enumerate() {
        let fixed = fx.oracle(&["--mode", "fixed"], id, "fixed.csv");
        assert!(close(refit[k].1, fixed, 1e-10, 1e-15), "id {id}: {} vs {fixed}", refit[k].1);
        let fd = fx.oracle(&["fd"], id, "fd.csv");
        assert!(close(grad[k].1, fd, 1e-4, 1e-10), "id {id}: {} vs {fd}", grad[k].1);
    }
    // full retraining runs and reports a finite value
    assert!(fx.oracle(&["--mode", "full"], "3", "full.csv").is_finite());
}

#[test]
fn training_is_byte_reproducible() {
    let fx = Fixture::new();
    fx.train("a.json", &["--seed", "5"]);
    fx.train("b.json", &["--seed", "5"]);
    assert_eq!(std::fs::read(fx.path("a.json")).unwrap(), std::fs::read(fx.path("b.json")).unwrap());
}

#[test]
fn top_k_zero_equals_single_point() {
    let fx = Fixture::new();
    fx.train("model.json", &[]);
    for method in ["fastleafrefit", "fastleafinfluence"] {
        let a = fx.influence(method, "topk:0", "", "a.csv", "1");
        let b = fx.influence(method, "single", "", "b.csv", "1");
        assert_eq!(a.len(), 120);
        assert_eq!(a, b);
    }
}

#[test]
fn parallel_output_is_sorted_and_identical() {
    let fx = Fixture::new();
    fx.train("model.json", &[]);
    let a = fx.influence("fastleafrefit", "topk:2", "", "a.csv", "1");
    let b = fx.influence("fastleafrefit", "topk:2", "", "b.csv", "4");
    assert_eq!(a, b);
    assert!(a.windows(2).all(|w| w[0].0 < w[1].0));
}

#[test]
fn failures_leave_no_output() {
    let fx = Fixture::new();
    fx.train("model.json", &["--no-trace"]);
    let (model, test, out) = (fx.s("model.json"), fx.s("test.csv"), fx.s("out.csv"));
    let res = leafinf(&["influence", "--model", &model, "--method", "leafrefit", "--test-data", &test, "--out", &out]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("trace"));
    assert!(!fx.path("out.csv").exists());

    // test data missing a feature column
    write_csv(fx.path("narrow.csv"), &synthetic::classification(5, 2, 0.1, 3), None).unwrap();
    fx.train("model.json", &[]);
    let narrow = fx.s("narrow.csv");
    let res = leafinf(&["influence", "--model", &model, "--method", "leafrefit", "--test-data", &narrow, "--out", &out]);
    assert!(!res.status.success());
    assert!(!fx.path("out.csv").exists());

    let res = leafinf(&["influence", "--model", &model, "--method", "nope", "--test-data", &test, "--out", &out]);
    assert!(!res.status.success());
    let leftovers = std::fs::read_dir(fx.dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(".leafinf-"))
        .count();
    assert_eq!(leftovers, 0);
}

#[test]
fn experiment_writes_reports() {
    let fx = Fixture::new();
    let config = fx.path("bench.json");
    std::fs::write(
        &config,
        r#"{"data": {"kind": "classification", "n": 150, "d": 3, "seed": 1},
            "params": {"n_trees": 5, "depth": 2, "learning_rate": 0.2, "l2_reg": 0.0,
                       "loss": "logloss", "formula": "newton", "seed": 0, "bias": "auto"},
            "k_objects": 5, "repeats": 1}"#,
    )
    .unwrap();
    let out_dir = fx.s("bench");
    ok(&["experiment", "bench", "--config", config.to_str().unwrap(), "--out-dir", &out_dir]);
    assert!(fx.path("bench/report.json").exists());
    let rows = csv::Reader::from_path(fx.path("bench/report.csv")).unwrap().records().count();
    assert_eq!(rows, 6);
}
