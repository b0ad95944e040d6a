//! Synthetic clustered longitudinal data with known random intercepts.
//!
//! Each cluster `i` draws `b_i ~ N(0, σ_b²)`; each observation draws standard
//! normal features `x` and `y = g(x) + b_i + ε` with `ε ~ N(0, σ_e²)`.
//! Features can then be masked as missing at a fixed rate; targets never are.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClusterMeta, LongitudinalDataset, Observation};
use crate::error::{MerfError, Result};
use crate::numerics::RngStream;

/// The known fixed-effect function `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedFn {
    /// `Σ_j x_j`
    Linear,
    /// `2x₁ + x₂² + 4·1[x₃ > 0] + 2·ln|x₁|·x₃` on the first three features.
    HajjemNonlinear,
    Constant(f64),
}

impl FixedFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            FixedFn::Linear => x.iter().sum(),
            FixedFn::HajjemNonlinear => {
                let (x1, x2, x3) = (x[0], x[1], x[2]);
                let step = if x3 > 0.0 { 4.0 } else { 0.0 };
                2.0 * x1 + x2 * x2 + step + 2.0 * x1.abs().max(1e-6).ln() * x3
            }
            FixedFn::Constant(c) => c,
        }
    }

    pub fn min_features(&self) -> usize {
        match self {
            FixedFn::HajjemNonlinear => 3,
            _ => 0,
        }
    }
}

impl fmt::Display for FixedFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FixedFn::Linear => write!(f, "linear"),
            FixedFn::HajjemNonlinear => write!(f, "hajjem"),
            FixedFn::Constant(c) => write!(f, "constant:{c}"),
        }
    }
}

impl FromStr for FixedFn {
    type Err = MerfError;

    /// Accepts `linear`, `hajjem` or `constant:<value>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(FixedFn::Linear),
            "hajjem" => Ok(FixedFn::HajjemNonlinear),
            _ => s
                .strip_prefix("constant:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .map(FixedFn::Constant)
                .ok_or_else(|| {
                    MerfError::InvalidArgument(format!(
                        "unknown fixed function {s:?}; expected linear, hajjem or constant:<value>"
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsPerCluster {
    Fixed(usize),
    /// Inclusive range, drawn uniformly per cluster.
    Range(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_clusters: usize,
    pub obs_per_cluster: ObsPerCluster,
    pub p: usize,
    pub sigma_b: f64,
    pub sigma_e: f64,
    pub fixed_fn: FixedFn,
    pub missing_rate: f64,
    pub target_clip: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clusters: 50,
            obs_per_cluster: ObsPerCluster::Fixed(20),
            p: 5,
            sigma_b: 2.0,
            sigma_e: 1.0,
            fixed_fn: FixedFn::HajjemNonlinear,
            missing_rate: 0.0,
            target_clip: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MerfError::InvalidArgument(m));
        if self.n_clusters == 0 {
            return bad("n_clusters must be positive".into());
        }
        match self.obs_per_cluster {
            ObsPerCluster::Fixed(0) => return bad("obs_per_cluster must be positive".into()),
            ObsPerCluster::Range(lo, hi) if lo == 0 || lo > hi => {
                return bad(format!("bad obs_per_cluster range {lo}..={hi}"))
            }
            _ => {}
        }
        if self.p < 3 {
            return bad(format!("need at least 3 features, got {}", self.p));
        }
        if self.p < self.fixed_fn.min_features() {
            return bad(format!("{} needs at least {} features", self.fixed_fn, self.fixed_fn.min_features()));
        }
        if !(self.sigma_b >= 0.0) || !self.sigma_b.is_finite() {
            return bad(format!("sigma_b must be >= 0, got {}", self.sigma_b));
        }
        if !(self.sigma_e > 0.0) || !self.sigma_e.is_finite() {
            return bad(format!("sigma_e must be > 0, got {}", self.sigma_e));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing_rate must lie in [0, 1), got {}", self.missing_rate));
        }
        if let Some((lo, hi)) = self.target_clip {
            if !(lo <= hi) {
                return bad(format!("bad target clip [{lo}, {hi}]"));
            }
        }
        Ok(())
    }

    fn clip(&self, y: f64) -> f64 {
        match self.target_clip {
            Some((lo, hi)) => y.clamp(lo, hi),
            None => y,
        }
    }
}

/// Ground truth behind a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub b_true: BTreeMap<String, f64>,
    pub sigma_b2: f64,
    pub sigma_e2: f64,
}

pub fn cluster_name(i: usize, n_clusters: usize) -> String {
    let width = n_clusters.saturating_sub(1).to_string().len().max(2);
    format!("c{i:0width$}")
}

/// Generates a dataset and its ground truth. Cluster `i` draws from the
/// child stream `cluster-{i}` of the config seed.
pub fn generate(cfg: &SynthConfig) -> Result<(LongitudinalDataset, SynthTruth)> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, "synth");
    let mut observations = Vec::new();
    let mut b_true = BTreeMap::new();
    for i in 0..cfg.n_clusters {
        let id = cluster_name(i, cfg.n_clusters);
        let mut rng = root.child(format!("cluster-{i}"));
        let b = cfg.sigma_b * rng.standard_normal();
        let n_i = match cfg.obs_per_cluster {
            ObsPerCluster::Fixed(n) => n,
            ObsPerCluster::Range(lo, hi) => lo + rng.below(hi - lo + 1),
        };
        for visit in 1..=n_i {
            let x: Vec<f64> = (0..cfg.p).map(|_| rng.standard_normal()).collect();
            let y = cfg.fixed_fn.eval(&x) + b + cfg.sigma_e * rng.standard_normal();
            let features = x
                .into_iter()
                .map(|v| (rng.uniform() >= cfg.missing_rate).then_some(v))
                .collect();
            observations.push(Observation {
                cluster_id: id.clone(),
                visit: visit as u64,
                features,
                target: Some(cfg.clip(y)),
            });
        }
        b_true.insert(id, b);
    }
    let ds = LongitudinalDataset::new(observations, cfg.p, vec![], cfg.target_clip)?;
    let truth = SynthTruth {
        b_true,
        sigma_b2: cfg.sigma_b * cfg.sigma_b,
        sigma_e2: cfg.sigma_e * cfg.sigma_e,
    };
    Ok((ds, truth))
}

/// A "visit zero" score per cluster: `g` at a fresh feature draw, plus the
/// cluster's true intercept, plus fresh noise.
pub fn generate_screen_scores(
    ds: &LongitudinalDataset,
    truth: &SynthTruth,
    cfg: &SynthConfig,
    rng: &RngStream,
) -> Result<Vec<ClusterMeta>> {
    ds.cluster_ids()
        .into_iter()
        .map(|id| {
            let b = *truth
                .b_true
                .get(&id)
                .ok_or_else(|| MerfError::Dataset(format!("cluster {id} missing from ground truth")))?;
            let mut stream = rng.child(format!("screen-{id}"));
            let x: Vec<f64> = (0..ds.p()).map(|_| stream.standard_normal()).collect();
            let score = cfg.fixed_fn.eval(&x) + b + cfg.sigma_e * stream.standard_normal();
            Ok(ClusterMeta {
                cluster_id: id,
                screen_score: Some(cfg.clip(score)),
            })
        })
        .collect()
}

/// Dataset with screening metadata attached, the form the CLI writes out.
pub fn generate_with_screen(cfg: &SynthConfig) -> Result<(LongitudinalDataset, SynthTruth)> {
    let (ds, truth) = generate(cfg)?;
    let meta = generate_screen_scores(&ds, &truth, cfg, &RngStream::new(cfg.seed, "screen"))?;
    Ok((ds.with_meta(meta)?, truth))
}
