//! Command-line front end: `simulate`, `fit`, `predict` and `evaluate`.
//!
//! Each command is a plain function taking its parsed arguments, so the
//! binary stays a thin wrapper and the commands can be driven from tests.

mod container;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use container::{dataset_fingerprint, ModelContainer, StoredModel, FORMAT_VERSION, MAGIC};

use crate::baselines::fit_baseline;
use crate::dataset::{load_csv, LongitudinalDataset, DEFAULT_MISSING_SENTINEL};
use crate::error::{MerfError, Result};
use crate::evaluation::{run_experiment, EvalReport, ExperimentOptions, ModelKind, Scenario};
use crate::forest::fit_forest;
use crate::merf::{fit_merf, MerfConfig, PredictionMode};
use crate::numerics::RngStream;
use crate::synth::{generate_with_screen, FixedFn, ObsPerCluster, SynthConfig};

/// Settings shared by `fit` and `evaluate`, loadable from a JSON file.
/// Missing keys take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub merf: MerfConfig,
    pub experiment: ExperimentOptions,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
            None => Ok(Self::default()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "merf", version, about = "Mixed effects random forests for longitudinal data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic clustered dataset.
    Simulate(SimulateArgs),
    /// Fit a model and write a model container.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Run a multi-seed evaluation and write a JSON report.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 50)]
    pub clusters: usize,
    #[arg(long, default_value_t = 20)]
    pub obs: usize,
    /// Draw each cluster's size uniformly from `obs..=obs-max`.
    #[arg(long)]
    pub obs_max: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub features: usize,
    #[arg(long, default_value_t = 2.0)]
    pub sigma_b: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_e: f64,
    /// `linear`, `hajjem` or `constant:<value>`.
    #[arg(long = "fn", default_value = "hajjem")]
    pub fixed_fn: FixedFn,
    #[arg(long, default_value_t = 0.0)]
    pub missing_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Metadata CSV path; defaults to `<out stem>.meta.csv`.
    #[arg(long)]
    pub meta_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// `merf`, `rf` or a baseline name (`group_mean`, `patient_screen`, ...).
    #[arg(long, default_value = "merf")]
    pub model: ModelKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub merf_iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Scenario,
    /// Runs seeds `0..n`.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Explicit comma-separated seeds; overrides `--seeds`.
    #[arg(long, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    #[arg(long)]
    pub merf_iters: Option<usize>,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| ()),
    }
}

/// `<dir>/<stem>.meta.csv` next to `path`.
pub fn default_meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    path.with_file_name(format!("{stem}.meta.csv"))
}

/// `<path>.gll.txt`
pub fn gll_sidecar_path(container: &Path) -> PathBuf {
    let mut s = container.as_os_str().to_owned();
    s.push(".gll.txt");
    PathBuf::from(s)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let obs_per_cluster = match a.obs_max {
        Some(hi) => ObsPerCluster::Range(a.obs, hi),
        None => ObsPerCluster::Fixed(a.obs),
    };
    let cfg = SynthConfig {
        n_clusters: a.clusters,
        obs_per_cluster,
        p: a.features,
        sigma_b: a.sigma_b,
        sigma_e: a.sigma_e,
        fixed_fn: a.fixed_fn,
        missing_rate: a.missing_rate,
        target_clip: None,
        seed: a.seed,
    };
    let (ds, _) = generate_with_screen(&cfg)?;
    let meta = a.meta_out.clone().unwrap_or_else(|| default_meta_path(&a.out));
    ds.save_csv(&a.out, Some(&meta))?;
    log::info!("wrote {} rows to {} and metadata to {}", ds.len(), a.out.display(), meta.display());
    Ok(())
}

fn load_training(data: &Path, meta: Option<&Path>) -> Result<LongitudinalDataset> {
    Ok(load_csv(data, meta)?
        .filter_labeled()?
        .impute_missing(DEFAULT_MISSING_SENTINEL))
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?.merf;
    if let Some(n) = a.merf_iters {
        cfg.max_iterations = n;
    }
    cfg.validate()?;
    let ds = load_training(&a.data, a.meta.as_deref())?;
    let rng = RngStream::new(a.seed, format!("fit/{}", a.model.name()));
    let (payload, echo) = match a.model {
        ModelKind::Merf => {
            let m = fit_merf(&ds, &cfg, &rng)?;
            let mut log = String::new();
            for (i, g) in m.gll_history().iter().enumerate() {
                log.push_str(&format!("{}\t{g:.10e}\n", i + 1));
            }
            fs::write(gll_sidecar_path(&a.out), log)?;
            (StoredModel::Merf(m), serde_json::to_string(&cfg)?)
        }
        ModelKind::Forest => {
            let f = fit_forest(&ds.design_matrix()?, &ds.targets()?, &cfg.rf, &rng)?;
            (StoredModel::Forest(f), serde_json::to_string(&cfg.rf)?)
        }
        ModelKind::Baseline(kind) => (StoredModel::Baseline(fit_baseline(kind, &ds)?), serde_json::to_string(&kind)?),
    };
    let container = ModelContainer::new(payload, echo, dataset_fingerprint(&ds)?);
    container.save(&a.out)
}

/// Predictions for every row of `ds` with the mode each was produced in.
pub fn predict_rows(model: &StoredModel, ds: &LongitudinalDataset) -> Result<Vec<(f64, &'static str)>> {
    if let Some(p) = model.n_features() {
        if p != ds.p() {
            return Err(MerfError::Dimension(format!(
                "model expects {p} features, input has {}",
                ds.p()
            )));
        }
    }
    let mut out = vec![(0.0, ""); ds.len()];
    match model {
        StoredModel::Merf(m) => {
            let x = ds.design_matrix()?;
            for (id, rows) in ds.group_by_cluster()? {
                let (pred, mode) = m.predict_with_mode(&x.select_rows(&rows), Some(&id))?;
                let tag = match mode {
                    PredictionMode::Conditional => "conditional",
                    PredictionMode::Unconditional => "unconditional",
                };
                for (&r, p) in rows.iter().zip(pred) {
                    out[r] = (p, tag);
                }
            }
        }
        StoredModel::Forest(f) => {
            for (o, p) in out.iter_mut().zip(f.predict(&ds.design_matrix()?)?) {
                *o = (p, "unconditional");
            }
        }
        StoredModel::Baseline(b) => {
            let mut b = b.clone();
            for m in ds.cluster_meta() {
                if let Some(s) = m.screen_score {
                    b.screen_value.entry(m.cluster_id.clone()).or_insert(s);
                }
            }
            for (o, p) in out.iter_mut().zip(b.predict(&ds.cluster_column())?) {
                *o = (p, "baseline");
            }
        }
    }
    Ok(out)
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let container = ModelContainer::load(&a.model)?;
    let ds = load_csv(&a.data, a.meta.as_deref())?.impute_missing(DEFAULT_MISSING_SENTINEL);
    let preds = predict_rows(&container.payload, &ds)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&a.out)?;
    w.write_record(["cluster_id", "visit", "prediction", "mode"])?;
    for (obs, (p, mode)) in ds.observations().iter().zip(preds) {
        w.write_record([obs.cluster_id.as_str(), &obs.visit.to_string(), &p.to_string(), mode])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<EvalReport> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(n) = a.merf_iters {
        cfg.merf.max_iterations = n;
    }
    let seeds: Vec<u64> = match &a.seed_list {
        Some(list) => list.clone(),
        None => (0..a.seeds).collect(),
    };
    let ds = load_csv(&a.data, a.meta.as_deref())?;
    let report = run_experiment(&ds, a.scenario, &seeds, &cfg.merf, &cfg.experiment)?;
    let mut f = fs::File::create(&a.report)?;
    serde_json::to_writer_pretty(&mut f, &report)?;
    f.write_all(b"\n")?;
    Ok(report)
}
