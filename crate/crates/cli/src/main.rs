use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tempfile::NamedTempFile;

use leafinf::dataio::{load_csv, load_csv_with_schema};
use leafinf::eval::{self, BenchConfig, MismatchConfig, NoiseConfig, ProxyConfig};
use leafinf::gbdt::{fit, BiasInit, Ensemble, LeafFormula, TrainParams, TrainingTrace};
use leafinf::influence::{batch_influence, Method, TestPoints};
use leafinf::oracle::{fd_loss_derivative, retrain_without, RetrainMode};
use leafinf::{Dataset, LossKind, UpdateSetStrategy};

#[derive(Parser)]
#[command(name = "leafinf", version, about = "Boosted trees with training-sample influence estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an ensemble and save it (with its training trace) as JSON.
    Train(TrainArgs),
    /// Influence of training rows on a test set, one CSV row per training row.
    Influence(InfluenceArgs),
    /// Brute-force reference values by retraining.
    Oracle(OracleArgs),
    /// Run one of the evaluation drivers.
    Experiment {
        kind: ExperimentKind,
        /// JSON config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for report.json / report.csv (and curves.csv for noise).
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    label_col: String,
    #[arg(long)]
    weight_col: Option<String>,
    #[arg(long, default_value = "logloss")]
    loss: LossKind,
    #[arg(long, default_value = "newton")]
    formula: LeafFormula,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long, default_value_t = 0.2)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    #[arg(long, env = "LEAFINF_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Drop the training trace (the model can then only predict).
    #[arg(long)]
    no_trace: bool,
}

#[derive(Args)]
struct InfluenceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    method: Method,
    #[arg(long, default_value = "all")]
    strategy: UpdateSetStrategy,
    /// Comma-separated training row positions; all rows when omitted.
    #[arg(long, value_delimiter = ',')]
    train_ids: Option<Vec<u64>>,
    #[arg(long)]
    test_data: PathBuf,
    #[arg(long)]
    weight_col: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
struct OracleArgs {
    #[command(subcommand)]
    fd: Option<OracleCommand>,
    #[arg(long, default_value = "fixed")]
    mode: RetrainMode,
    #[command(flatten)]
    common: Option<OracleCommon>,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Central finite difference of the mean test loss in the row's weight.
    Fd {
        #[arg(long, default_value_t = leafinf::oracle::FD_EPS)]
        eps: f64,
        #[command(flatten)]
        common: OracleCommon,
    },
}

#[derive(Args)]
struct OracleCommon {
    #[arg(long)]
    model: PathBuf,
    /// Training data the model was fit on.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    weight_col: Option<String>,
    #[arg(long)]
    train_id: u64,
    #[arg(long)]
    test_data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    Proxy,
    Noise,
    Mismatch,
    Bench,
}

/// Output files are written to temporaries next to their destination and
/// only renamed into place once every file of a command succeeded.
#[derive(Default)]
struct Staged(Vec<(NamedTempFile, PathBuf)>);

impl Staged {
    fn add(&mut self, dest: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let dir = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let tmp = tempfile::Builder::new()
            .prefix(".leafinf-")
            .tempfile_in(dir)
            .with_context(|| format!("cannot create a file in {}", dir.display()))?;
        write(tmp.path()).with_context(|| format!("writing {}", dest.display()))?;
        self.0.push((tmp, dest.to_path_buf()));
        Ok(())
    }

    fn commit(self) -> Result<()> {
        for (tmp, dest) in self.0 {
            tmp.persist(&dest).with_context(|| format!("renaming into {}", dest.display()))?;
        }
        Ok(())
    }
}

fn load_model(path: &Path) -> Result<(Ensemble, Option<TrainingTrace>)> {
    Ensemble::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_test(path: &Path, weight_col: Option<&str>, ens: &Ensemble) -> Result<Dataset> {
    let ds = load_csv_with_schema(path, weight_col, &ens.schema)
        .with_context(|| format!("loading test data {}", path.display()))?;
    if ds.n_features() != ens.n_features {
        bail!("test data has {} features, model expects {}", ds.n_features(), ens.n_features);
    }
    Ok(ds)
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = load_csv(&a.data, &a.label_col, a.weight_col.as_deref())
        .with_context(|| format!("loading {}", a.data.display()))?;
    let params = TrainParams {
        n_trees: a.trees,
        depth: a.depth,
        learning_rate: a.lr,
        l2_reg: a.l2,
        loss: a.loss,
        formula: a.formula,
        seed: a.seed,
        bias: BiasInit::Auto,
    };
    let (ens, trace) = fit(&ds, &params)?;
    let bytes = ens.to_json_bytes((!a.no_trace).then_some(&trace))?;
    let mut staged = Staged::default();
    staged.add(&a.out, |p| Ok(std::fs::write(p, &bytes)?))?;
    staged.commit()
}

fn influence(a: InfluenceArgs) -> Result<()> {
    let (ens, trace) = load_model(&a.model)?;
    let trace = trace.context("model file has no training trace (trained with --no-trace?)")?;
    trace.check_against(&ens)?;
    let strategy = a.method.effective_strategy(a.strategy);
    strategy.validate()?;
    let test = load_test(&a.test_data, a.weight_col.as_deref(), &ens)?;
    let tests = TestPoints::new(&ens, &test)?;

    let n = trace.n_rows();
    let mut indices: Vec<usize> = match &a.train_ids {
        None => (0..n).collect(),
        Some(ids) => ids.iter().map(|&id| id as usize).collect(),
    };
    if let Some(bad) = indices.iter().find(|&&i| i >= n) {
        bail!("train id {bad} out of range (model has {n} training rows)");
    }
    indices.sort_unstable();
    indices.dedup();
    let ids: Vec<u64> = (0..n as u64).collect();
    let rows = batch_influence(&trace, &ens, a.method, strategy, &indices, &ids, &tests, a.jobs)?;

    let mut staged = Staged::default();
    staged.add(&a.out, |p| {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["train_id", "method", "strategy", "influence_value", "seconds"])?;
        for r in &rows {
            w.write_record([
                r.train_id.to_string(),
                a.method.to_string(),
                strategy.to_string(),
                mean(&r.values).to_string(),
                r.seconds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    staged.commit()
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn oracle(a: OracleArgs) -> Result<()> {
    let (common, fd_eps) = match a.fd {
        Some(OracleCommand::Fd { eps, common }) => (common, Some(eps)),
        None => (a.common.context("missing oracle arguments")?, None),
    };
    let (ens, _) = load_model(&common.model)?;
    let ds = load_csv_with_schema(&common.data, common.weight_col.as_deref(), &ens.schema)
        .with_context(|| format!("loading {}", common.data.display()))?;
    let test = load_test(&common.test_data, None, &ens)?;
    let index = common.train_id as usize;
    if index >= ds.n_rows() {
        bail!("train id {index} out of range ({} training rows)", ds.n_rows());
    }
    let loss = ens.loss();
    let (mode, value) = match fd_eps {
        Some(eps) => {
            let mut d = Vec::with_capacity(test.n_rows());
            for k in 0..test.n_rows() {
                d.push(fd_loss_derivative(&ds, &ens.params, index, eps, &ens, test.row(k), test.labels()[k])?);
            }
            ("fd".to_string(), mean(&d))
        }
        None => {
            let retrained = retrain_without(&ds, &ens.params, index, a.mode, &ens)?;
            let mut d = Vec::with_capacity(test.n_rows());
            for k in 0..test.n_rows() {
                let (x, y) = (test.row(k), test.labels()[k]);
                d.push(loss.value(y, ens.predict(x)?) - loss.value(y, retrained.predict(x)?));
            }
            (a.mode.to_string(), mean(&d))
        }
    };
    let mut staged = Staged::default();
    staged.add(&common.out, |p| {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["train_id", "mode", "influence_value"])?;
        w.write_record([common.train_id.to_string(), mode, value.to_string()])?;
        w.flush()?;
        Ok(())
    })?;
    staged.commit()
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn experiment(kind: ExperimentKind, config: Option<&Path>, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let json = out_dir.join("report.json");
    let csv = out_dir.join("report.csv");
    let mut staged = Staged::default();
    match kind {
        ExperimentKind::Proxy => {
            let report = eval::proxy_approx_experiment(&read_config::<ProxyConfig>(config)?)?;
            staged.add(&json, |p| Ok(report.write_json(p)?))?;
            staged.add(&csv, |p| Ok(report.write_csv(p)?))?;
        }
        ExperimentKind::Noise => {
            let report = eval::noise_experiment(&read_config::<NoiseConfig>(config)?)?;
            staged.add(&json, |p| Ok(report.write_json(p)?))?;
            staged.add(&csv, |p| Ok(report.write_csv(p)?))?;
            staged.add(&out_dir.join("curves.csv"), |p| Ok(report.write_curves_csv(p)?))?;
        }
        ExperimentKind::Mismatch => {
            let report = eval::mismatch_experiment(&read_config::<MismatchConfig>(config)?)?;
            staged.add(&json, |p| Ok(report.write_json(p)?))?;
            staged.add(&csv, |p| Ok(report.write_csv(p)?))?;
        }
        ExperimentKind::Bench => {
            let report = eval::runtime_bench(&read_config::<BenchConfig>(config)?)?;
            staged.add(&json, |p| Ok(report.write_json(p)?))?;
            staged.add(&csv, |p| Ok(report.write_csv(p)?))?;
        }
    }
    staged.commit()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Influence(a) => influence(a),
        Command::Oracle(a) => oracle(a),
        Command::Experiment { kind, config, out_dir } => experiment(kind, config.as_deref(), &out_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
