use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{participant_errors, user_lift, worst_case_error, ParticipantErrors};
use super::split::{make_split, Fold, Scenario};
use crate::baselines::{fit_baseline, BaselineKind};
use crate::dataset::{LongitudinalDataset, DEFAULT_MISSING_SENTINEL};
use crate::error::{MerfError, Result};
use crate::forest::{default_grid, fit_forest, tune_forest, RfHyperparams};
use crate::merf::{fit_merf, MerfConfig, PredictionMode};
use crate::numerics::RngStream;
use crate::stats::{fisher_combine, permutation_test_one_sample, DEFAULT_MAX_EXACT, DEFAULT_MC_RESAMPLES};

/// A model compared by the experiment runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Merf,
    Forest,
    Baseline(BaselineKind),
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Merf => "merf",
            ModelKind::Forest => "rf",
            ModelKind::Baseline(k) => k.name(),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = MerfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merf" => Ok(ModelKind::Merf),
            "rf" => Ok(ModelKind::Forest),
            other => other.parse().map(ModelKind::Baseline),
        }
    }
}

/// Personal baseline that user lift is measured against.
pub fn personal_baseline(scenario: Scenario) -> BaselineKind {
    match scenario {
        Scenario::Random => BaselineKind::PatientMean,
        Scenario::Time => BaselineKind::PatientMedian,
        Scenario::User => BaselineKind::PatientScreen,
    }
}

/// MERF, the plain forest and every baseline; the screening baseline only
/// when every cluster has a screening score.
pub fn default_models(ds: &LongitudinalDataset) -> Vec<ModelKind> {
    let has_screen = ds
        .cluster_ids()
        .iter()
        .all(|c| ds.screen_score(c).is_some());
    let mut models = vec![ModelKind::Merf, ModelKind::Forest];
    models.extend(
        BaselineKind::ALL
            .into_iter()
            .filter(|&k| has_screen || k != BaselineKind::PatientScreen)
            .map(ModelKind::Baseline),
    );
    models
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentOptions {
    /// Models to fit; `None` means [`default_models`].
    pub models: Option<Vec<ModelKind>>,
    /// Overrides the scenario's personal baseline.
    pub pbl: Option<BaselineKind>,
    /// Grid searched once per experiment for the plain forest; `None` uses
    /// the MERF forest hyperparameters unchanged.
    pub rf_grid: Option<Vec<RfHyperparams>>,
    pub rf_cv_folds: usize,
    pub max_exact: usize,
    pub mc_resamples: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            models: None,
            pbl: None,
            rf_grid: Some(default_grid()),
            rf_cv_folds: 3,
            max_exact: DEFAULT_MAX_EXACT,
            mc_resamples: DEFAULT_MC_RESAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub group_mae: BTreeMap<String, f64>,
    pub participants: BTreeMap<String, ParticipantErrors>,
    pub worst_case: BTreeMap<String, f64>,
    pub user_lift: BTreeMap<String, f64>,
    pub avg_user_lift: f64,
    pub perm_p: Option<f64>,
    pub perm_exact: bool,
    pub merf_conditional_rows: usize,
    pub merf_unconditional_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub pbl: BaselineKind,
    pub models: Vec<String>,
    pub n_observations: usize,
    pub n_clusters: usize,
    pub rf_hyperparams: RfHyperparams,
    pub merf_config: MerfConfig,
    pub seeds: Vec<SeedEntry>,
    pub avg_group_mae: BTreeMap<String, f64>,
    /// Per model, worst per-cluster MAE averaged over seeds.
    pub worst_case: BTreeMap<String, f64>,
    pub avg_pbl_err: f64,
    pub avg_merf_err: f64,
    pub avg_user_lift: f64,
    /// Fisher-combined p as reported in the results table: absent for the
    /// user split.
    pub user_lift_p: Option<f64>,
    /// Fisher-combined p over every seed's permutation p.
    pub fisher_p: Option<f64>,
    pub wc_pbl_err: f64,
    pub wc_merf_err: f64,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn model_stream(seed: u64, model: ModelKind, fold: usize) -> RngStream {
    RngStream::new(seed, format!("eval/{}/fold-{fold}", model.name()))
}

/// Test-row predictions of one model on one fold. Also returns how many rows
/// were predicted conditionally and unconditionally (MERF only).
fn predict_fold(
    ds: &LongitudinalDataset,
    fold: &Fold,
    model: ModelKind,
    seed: u64,
    fold_idx: usize,
    cfg: &MerfConfig,
    rf: &RfHyperparams,
) -> Result<(Vec<f64>, usize, usize)> {
    let train = ds.subset(&fold.train);
    let test = ds.subset(&fold.test);
    let rng = model_stream(seed, model, fold_idx);
    match model {
        ModelKind::Merf => {
            let m = fit_merf(&train, cfg, &rng)?;
            let x = test.design_matrix()?;
            let mut out = vec![0.0; test.len()];
            let (mut cond, mut uncond) = (0, 0);
            for (id, rows) in test.group_by_cluster()? {
                let (pred, mode) = m.predict_with_mode(&x.select_rows(&rows), Some(&id))?;
                match mode {
                    PredictionMode::Conditional => cond += rows.len(),
                    PredictionMode::Unconditional => uncond += rows.len(),
                }
                for (&r, p) in rows.iter().zip(pred) {
                    out[r] = p;
                }
            }
            Ok((out, cond, uncond))
        }
        ModelKind::Forest => {
            let f = fit_forest(&train.design_matrix()?, &train.targets()?, rf, &rng)?;
            Ok((f.predict(&test.design_matrix()?)?, 0, 0))
        }
        ModelKind::Baseline(kind) => {
            let b = fit_baseline(kind, &train)?;
            Ok((b.predict(&test.cluster_column())?, 0, 0))
        }
    }
}

/// Runs every model over every seed of one scenario and summarises the
/// results.
///
/// The dataset is filtered to labelled rows and imputed first. In the user
/// split each test cluster is unseen, so MERF predicts unconditionally; the
/// runner checks that this is the path taken.
pub fn run_experiment(
    ds: &LongitudinalDataset,
    scenario: Scenario,
    seeds: &[u64],
    cfg: &MerfConfig,
    opts: &ExperimentOptions,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(MerfError::InvalidArgument("no seeds given".into()));
    }
    cfg.validate()?;
    let ds = ds.filter_labeled()?.impute_missing(DEFAULT_MISSING_SENTINEL);
    let pbl = opts.pbl.unwrap_or_else(|| personal_baseline(scenario));
    let mut models = opts.models.clone().unwrap_or_else(|| default_models(&ds));
    for required in [ModelKind::Merf, ModelKind::Baseline(pbl)] {
        if !models.contains(&required) {
            models.push(required);
        }
    }
    let actual = ds.targets()?;

    let rf = match &opts.rf_grid {
        Some(grid) if models.contains(&ModelKind::Forest) => {
            let plan = make_split(&ds, scenario, seeds[0])?;
            let train = ds.subset(&plan.folds[0].train);
            tune_forest(
                &train.design_matrix()?,
                &train.targets()?,
                grid,
                opts.rf_cv_folds,
                &RngStream::new(seeds[0], "eval/rf-tune"),
            )?
        }
        _ => cfg.rf.clone(),
    };

    let mut entries = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let plan = make_split(&ds, scenario, seed)?;
        let mut test_rows: Vec<usize> = Vec::new();
        for fold in &plan.folds {
            test_rows.extend_from_slice(&fold.test);
        }
        let truth: Vec<f64> = test_rows.iter().map(|&i| actual[i]).collect();
        let ids: Vec<&str> = test_rows
            .iter()
            .map(|&i| ds.observations()[i].cluster_id.as_str())
            .collect();

        let mut group_mae = BTreeMap::new();
        let mut participants = BTreeMap::new();
        let mut worst_case = BTreeMap::new();
        let (mut cond, mut uncond) = (0, 0);
        for &model in &models {
            let mut pred = Vec::with_capacity(test_rows.len());
            for (k, fold) in plan.folds.iter().enumerate() {
                let (p, c, u) = predict_fold(&ds, fold, model, seed, k, cfg, &rf)?;
                pred.extend(p);
                cond += c;
                uncond += u;
            }
            let errs = participant_errors(&pred, &truth, &ids)?;
            group_mae.insert(model.name().to_owned(), errs.group_mae);
            worst_case.insert(model.name().to_owned(), worst_case_error(&errs.per_cluster_mae)?);
            participants.insert(model.name().to_owned(), errs);
        }
        if scenario == Scenario::User && cond > 0 {
            return Err(MerfError::Split(format!(
                "user split predicted {cond} rows conditionally"
            )));
        }

        let lift = user_lift(
            &participants[pbl.name()].per_cluster_mae,
            &participants[ModelKind::Merf.name()].per_cluster_mae,
        )?;
        let lifts: Vec<f64> = lift.values().copied().collect();
        let perm = permutation_test_one_sample(
            &lifts,
            opts.max_exact,
            opts.mc_resamples,
            &mut RngStream::new(seed, "eval/perm"),
        )?;
        log::info!(
            "{scenario} seed {seed}: merf {:.4}, {pbl} {:.4}, lift {:.4} (p {:.4})",
            group_mae["merf"],
            group_mae[pbl.name()],
            perm.observed_mean,
            perm.p_value
        );
        entries.push(SeedEntry {
            seed,
            group_mae,
            participants,
            worst_case,
            avg_user_lift: mean(lifts.iter().copied()),
            user_lift: lift,
            perm_p: Some(perm.p_value),
            perm_exact: perm.exact,
            merf_conditional_rows: cond,
            merf_unconditional_rows: uncond,
        });
    }

    let names: Vec<String> = models.iter().map(|m| m.name().to_owned()).collect();
    let avg_group_mae: BTreeMap<String, f64> = names
        .iter()
        .map(|n| (n.clone(), mean(entries.iter().map(|e| e.group_mae[n]))))
        .collect();
    let worst_case: BTreeMap<String, f64> = names
        .iter()
        .map(|n| (n.clone(), mean(entries.iter().map(|e| e.worst_case[n]))))
        .collect();
    let perm_ps: Option<Vec<f64>> = entries.iter().map(|e| e.perm_p).collect();
    let fisher_p = perm_ps.map(|ps| fisher_combine(&ps)).transpose()?;

    Ok(EvalReport {
        scenario,
        pbl,
        n_observations: ds.len(),
        n_clusters: ds.cluster_ids().len(),
        rf_hyperparams: rf,
        merf_config: cfg.clone(),
        avg_pbl_err: avg_group_mae[pbl.name()],
        avg_merf_err: avg_group_mae["merf"],
        avg_user_lift: mean(entries.iter().map(|e| e.avg_user_lift)),
        user_lift_p: if scenario == Scenario::User { None } else { fisher_p },
        fisher_p,
        wc_pbl_err: worst_case[pbl.name()],
        wc_merf_err: worst_case["merf"],
        models: names,
        seeds: entries,
        avg_group_mae,
        worst_case,
    })
}
