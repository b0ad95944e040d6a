//! Bagged CART regression forests: the fixed-effect learner of the mixed
//! model and the plain random-forest baseline.

mod tree;
mod tune;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MerfError, Result};
use crate::numerics::{Matrix, RngStream};

pub use tree::{fit_tree, predict_tree, DecisionTree, Node};
pub use tune::{cross_validate, default_grid, tune_forest};

/// How many features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    /// `⌈p / 3⌉`
    OneThird,
    Count(usize),
    Fraction(f64),
}

impl MaxFeatures {
    pub fn resolve(self, p: usize) -> Result<usize> {
        let k = match self {
            MaxFeatures::All => p,
            MaxFeatures::Sqrt => (p as f64).sqrt().ceil() as usize,
            MaxFeatures::OneThird => p.div_ceil(3),
            MaxFeatures::Count(k) => k,
            MaxFeatures::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(MerfError::InvalidArgument(format!("max_features fraction {f} outside (0, 1]")));
                }
                ((f * p as f64).ceil() as usize).max(1)
            }
        };
        if p == 0 {
            return Ok(0);
        }
        if k == 0 || k > p {
            return Err(MerfError::InvalidArgument(format!("max_features {k} outside [1, {p}]")));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfHyperparams {
    pub n_trees: usize,
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for RfHyperparams {
    /// The untuned settings used inside the mixed model.
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: None,
            max_features: MaxFeatures::OneThird,
            min_samples_split: 5,
            min_samples_leaf: 2,
            bootstrap: true,
        }
    }
}

impl RfHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MerfError::InvalidArgument(msg));
        if self.n_trees == 0 {
            return bad("n_trees must be positive".into());
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be positive".into());
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be >= 2".into());
        }
        if self.min_samples_leaf < 1 || self.min_samples_leaf > self.min_samples_split {
            return bad(format!(
                "min_samples_leaf {} must lie in [1, min_samples_split = {}]",
                self.min_samples_leaf, self.min_samples_split
            ));
        }
        Ok(())
    }

    pub(crate) fn resolve_max_features(&self, p: usize) -> Result<usize> {
        self.validate()?;
        self.max_features.resolve(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    trees: Vec<DecisionTree>,
    hyperparams: RfHyperparams,
    n_features: usize,
    train_target_range: (f64, f64),
}

impl RandomForestModel {
    /// Assembles a forest from already-fitted trees.
    pub fn from_trees(trees: Vec<DecisionTree>, hyperparams: RfHyperparams, train_target_range: (f64, f64)) -> Result<Self> {
        let n_features = trees
            .first()
            .map(DecisionTree::n_features)
            .ok_or_else(|| MerfError::InvalidArgument("a forest needs at least one tree".into()))?;
        if trees.iter().any(|t| t.n_features() != n_features) {
            return Err(MerfError::Dimension("trees disagree on feature count".into()));
        }
        Ok(Self {
            trees,
            hyperparams,
            n_features,
            train_target_range,
        })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn hyperparams(&self) -> &RfHyperparams {
        &self.hyperparams
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn train_target_range(&self) -> (f64, f64) {
        self.train_target_range
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    /// Mean tree prediction for each row of `x`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features {
            return Err(MerfError::Dimension(format!(
                "forest trained on {} features, got {}",
                self.n_features,
                x.cols()
            )));
        }
        Ok((0..x.rows()).into_par_iter().map(|i| self.predict_row(x.row(i))).collect())
    }
}

/// Fits `hp.n_trees` trees, tree `k` drawing from the child stream `tree-{k}`.
///
/// Trees are fitted in parallel; since each stream is derived up front the
/// result does not depend on the number of threads.
pub fn fit_forest(x: &Matrix, y: &[f64], hp: &RfHyperparams, rng: &RngStream) -> Result<RandomForestModel> {
    tree::check_training_data(x, y)?;
    hp.resolve_max_features(x.cols())?;
    let n = x.rows();
    let trees = (0..hp.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut stream = rng.child(format!("tree-{k}"));
            let samples: Vec<usize> = if hp.bootstrap {
                (0..n).map(|_| stream.below(n)).collect()
            } else {
                (0..n).collect()
            };
            tree::fit_tree_on(x, y, &samples, hp, &mut stream)
        })
        .collect::<Result<Vec<_>>>()?;
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    RandomForestModel::from_trees(trees, hp.clone(), (lo, hi))
}

pub fn predict_forest(model: &RandomForestModel, x: &Matrix) -> Result<Vec<f64>> {
    model.predict(x)
}
