//! Mixed effects random forest.
//!
//! The response of cluster `i` is modelled as `Y_i = f(X_i) + Z_i b_i + ε_i`
//! with `b_i ~ N(0, D)` and `ε_i ~ N(0, σ² I)`. The fixed effect `f` is a
//! random forest; `Z_i` is the random-effect design (a column of ones for a
//! random intercept). Fitting alternates a forest refit on targets with the
//! current random effects removed and closed-form updates of `b̂_i`, `D̂`
//! and `σ̂²`, monitoring the generalised log-likelihood.
//!
//! Prediction for a cluster seen in training is conditional, `f̂(x) + zᵀb̂_i`;
//! for any other cluster it falls back to the forest alone.

mod em;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::LongitudinalDataset;
use crate::error::{MerfError, Result};
use crate::forest::{RandomForestModel, RfHyperparams};
use crate::numerics::{Matrix, RngStream};

pub use em::{
    cluster_residuals, compute_gll, e_step, floor_psd, m_step, random_effect_estimate, update_random_effects,
    v_inverse, v_inverse_direct, v_inverse_woodbury, EStep, EmState, DIRECT_INVERSE_MAX_ROWS,
};

/// Which columns enter the random-effect design `Z_i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomEffectSpec {
    /// `Z_i` is a column of ones.
    InterceptOnly,
    /// Selected feature columns, optionally preceded by a ones column.
    Columns { indices: Vec<usize>, intercept: bool },
}

impl RandomEffectSpec {
    pub fn q(&self) -> usize {
        match self {
            RandomEffectSpec::InterceptOnly => 1,
            RandomEffectSpec::Columns { indices, intercept } => indices.len() + usize::from(*intercept),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if let RandomEffectSpec::Columns { indices, .. } = self {
            if self.q() == 0 {
                return Err(MerfError::InvalidArgument("random-effect design has no columns".into()));
            }
            let mut seen = std::collections::HashSet::new();
            for &j in indices {
                if j >= p {
                    return Err(MerfError::InvalidArgument(format!(
                        "random-effect column {j} out of range for {p} features"
                    )));
                }
                if !seen.insert(j) {
                    return Err(MerfError::InvalidArgument(format!("random-effect column {j} repeated")));
                }
            }
        }
        Ok(())
    }
}

/// Builds the `n_i × q` random-effect design for a block of feature rows.
pub fn build_z(rows: &Matrix, spec: &RandomEffectSpec) -> Result<Matrix> {
    spec.validate(rows.cols())?;
    let n = rows.rows();
    match spec {
        RandomEffectSpec::InterceptOnly => Ok(Matrix::column(&vec![1.0; n])),
        RandomEffectSpec::Columns { indices, intercept } => {
            let q = spec.q();
            let mut z = Matrix::zeros(n, q);
            for i in 0..n {
                let offset = usize::from(*intercept);
                if *intercept {
                    z[(i, 0)] = 1.0;
                }
                for (k, &j) in indices.iter().enumerate() {
                    z[(i, offset + k)] = rows[(i, j)];
                }
            }
            Ok(z)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MerfConfig {
    pub max_iterations: usize,
    /// Relative GLL change below which fitting stops when `early_stop` is set.
    pub gll_rel_tol: f64,
    pub early_stop: bool,
    pub rf: RfHyperparams,
    pub re_spec: RandomEffectSpec,
    pub sigma2_init: f64,
    pub d_init_scale: f64,
}

impl Default for MerfConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            gll_rel_tol: 1e-5,
            early_stop: true,
            rf: RfHyperparams::default(),
            re_spec: RandomEffectSpec::InterceptOnly,
            sigma2_init: 1.0,
            d_init_scale: 1.0,
        }
    }
}

impl MerfConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MerfError::InvalidArgument(m.into()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.gll_rel_tol >= 0.0) {
            return bad("gll_rel_tol must be >= 0");
        }
        if !(self.sigma2_init > 0.0) || !self.sigma2_init.is_finite() {
            return bad("sigma2_init must be positive");
        }
        if !(self.d_init_scale > 0.0) || !self.d_init_scale.is_finite() {
            return bad("d_init_scale must be positive");
        }
        self.rf.validate()
    }
}

/// One cluster's rows within a [`ClusterDesign`].
#[derive(Debug, Clone)]
pub struct ClusterBlock {
    pub id: String,
    /// Row indices into the design, in visit order.
    pub rows: Vec<usize>,
    pub z: Matrix,
}

/// Training data arranged for EM: pooled `X`, `y`, and per-cluster blocks in
/// sorted cluster-id order.
#[derive(Debug, Clone)]
pub struct ClusterDesign {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub clusters: Vec<ClusterBlock>,
}

impl ClusterDesign {
    pub fn from_dataset(ds: &LongitudinalDataset, spec: &RandomEffectSpec) -> Result<Self> {
        let x = ds.design_matrix()?;
        let y = ds.targets()?;
        spec.validate(ds.p())?;
        let clusters = ds
            .group_by_cluster()?
            .into_iter()
            .map(|(id, rows)| {
                let z = build_z(&x.select_rows(&rows), spec)?;
                Ok(ClusterBlock { id, rows, z })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(x, y, clusters)
    }

    pub fn new(x: Matrix, y: Vec<f64>, clusters: Vec<ClusterBlock>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(MerfError::Dimension(format!("{} rows but {} targets", x.rows(), y.len())));
        }
        if clusters.is_empty() {
            return Err(MerfError::InvalidArgument("no clusters to fit".into()));
        }
        Ok(Self { x, y, clusters })
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }
}

/// How a prediction was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    Conditional,
    Unconditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MerfModel {
    forest: RandomForestModel,
    b_hat: BTreeMap<String, Vec<f64>>,
    d_hat: Matrix,
    sigma2_hat: f64,
    gll_history: Vec<f64>,
    re_spec: RandomEffectSpec,
}

impl MerfModel {
    pub fn forest(&self) -> &RandomForestModel {
        &self.forest
    }

    pub fn b_hat(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.b_hat
    }

    pub fn random_effect(&self, cluster_id: &str) -> Option<&[f64]> {
        self.b_hat.get(cluster_id).map(Vec::as_slice)
    }

    pub fn d_hat(&self) -> &Matrix {
        &self.d_hat
    }

    pub fn sigma2_hat(&self) -> f64 {
        self.sigma2_hat
    }

    pub fn gll_history(&self) -> &[f64] {
        &self.gll_history
    }

    pub fn re_spec(&self) -> &RandomEffectSpec {
        &self.re_spec
    }

    pub fn n_features(&self) -> usize {
        self.forest.n_features()
    }

    pub fn iterations(&self) -> usize {
        self.gll_history.len()
    }

    /// `f̂(x) + z(x)ᵀ b̂_i` for a cluster seen in training.
    pub fn predict_conditional(&self, x: &Matrix, cluster_id: &str) -> Result<Vec<f64>> {
        let b = self
            .b_hat
            .get(cluster_id)
            .ok_or_else(|| MerfError::UnknownCluster(cluster_id.to_owned()))?;
        let mut out = self.forest.predict(x)?;
        let zb = build_z(x, &self.re_spec)?.mul_vec(b)?;
        for (o, s) in out.iter_mut().zip(zb) {
            *o += s;
        }
        Ok(out)
    }

    /// `f̂(x)`: the prediction for a cluster not seen in training.
    pub fn predict_unconditional(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.forest.predict(x)
    }

    /// Conditional when `cluster_id` was seen in training, unconditional
    /// otherwise.
    pub fn predict_with_mode(&self, x: &Matrix, cluster_id: Option<&str>) -> Result<(Vec<f64>, PredictionMode)> {
        match cluster_id {
            Some(id) if self.b_hat.contains_key(id) => {
                Ok((self.predict_conditional(x, id)?, PredictionMode::Conditional))
            }
            _ => Ok((self.predict_unconditional(x)?, PredictionMode::Unconditional)),
        }
    }

    pub fn predict(&self, x: &Matrix, cluster_id: Option<&str>) -> Result<Vec<f64>> {
        self.predict_with_mode(x, cluster_id).map(|(p, _)| p)
    }

    /// Generalised log-likelihood of this model on a labelled dataset whose
    /// clusters all have random effects.
    pub fn gll(&self, ds: &LongitudinalDataset) -> Result<f64> {
        let design = ClusterDesign::from_dataset(ds, &self.re_spec)?;
        let b_hat = design
            .clusters
            .iter()
            .map(|c| {
                self.b_hat
                    .get(&c.id)
                    .cloned()
                    .ok_or_else(|| MerfError::UnknownCluster(c.id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let fitted = self.forest.predict(&design.x)?;
        let state = EmState {
            b_hat,
            d_hat: self.d_hat.clone(),
            sigma2: self.sigma2_hat,
        };
        compute_gll(&design, &fitted, &state)
    }
}

/// Fits a mixed effects random forest on a labelled, imputed dataset.
///
/// Starts from `b̂ = 0`, `D̂ = d_init_scale · I`, `σ̂² = sigma2_init`, then runs
/// E-step, M-step and GLL evaluation up to `max_iterations` times. Iteration
/// `r` refits the forest with the child stream `em-iter-{r}`. With
/// `early_stop`, fitting halts once the relative GLL change drops below
/// `gll_rel_tol`.
pub fn fit_merf(ds: &LongitudinalDataset, cfg: &MerfConfig, rng: &RngStream) -> Result<MerfModel> {
    cfg.validate()?;
    let design = ClusterDesign::from_dataset(ds, &cfg.re_spec)?;
    fit_merf_design(&design, cfg, rng)
}

pub fn fit_merf_design(design: &ClusterDesign, cfg: &MerfConfig, rng: &RngStream) -> Result<MerfModel> {
    cfg.validate()?;
    let q = cfg.re_spec.q();
    let mut state = EmState::initial(design.n_clusters(), q, cfg.d_init_scale, cfg.sigma2_init);
    let mut history = Vec::with_capacity(cfg.max_iterations);
    let mut forest = None;

    for iteration in 1..=cfg.max_iterations {
        let estep = e_step(design, &state, &cfg.rf, &rng.child(format!("em-iter-{iteration}")))?;
        let (sigma2, d_hat) = m_step(design, &state, &estep, iteration)?;
        state = EmState {
            b_hat: estep.b_hat,
            d_hat,
            sigma2,
        };
        let gll = compute_gll(design, &estep.fitted, &state)?;
        if !gll.is_finite() {
            return Err(MerfError::NonFinite {
                iteration,
                what: "GLL".into(),
            });
        }
        log::debug!("EM iteration {iteration}: GLL {gll:.6}, sigma2 {sigma2:.6}");
        let prev = history.last().copied();
        history.push(gll);
        forest = Some(estep.forest);
        if let (true, Some(prev)) = (cfg.early_stop, prev) {
            let rel: f64 = (gll - prev).abs() / (prev.abs() + 1e-12);
            if rel < cfg.gll_rel_tol {
                break;
            }
        }
    }

    let b_hat = design
        .clusters
        .iter()
        .zip(state.b_hat)
        .map(|(c, b)| (c.id.clone(), b))
        .collect();
    Ok(MerfModel {
        forest: forest.expect("at least one EM iteration runs"),
        b_hat,
        d_hat: state.d_hat,
        sigma2_hat: state.sigma2,
        gll_history: history,
        re_spec: cfg.re_spec.clone(),
    })
}

/// Unconditional prediction for every row.
pub fn predict_unconditional(model: &MerfModel, x: &Matrix) -> Result<Vec<f64>> {
    model.predict_unconditional(x)
}

pub fn predict_conditional(model: &MerfModel, x: &Matrix, cluster_id: &str) -> Result<Vec<f64>> {
    model.predict_conditional(x, cluster_id)
}

pub fn predict(model: &MerfModel, x: &Matrix, cluster_id: Option<&str>) -> Result<Vec<f64>> {
    model.predict(x, cluster_id)
}

#[cfg(test)]
mod tests;
