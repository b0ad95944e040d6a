use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::LongitudinalDataset;
use crate::error::{MerfError, Result};
use crate::numerics::RngStream;

pub const DEFAULT_TRAIN_RATIO: f64 = 0.7;
pub const DEFAULT_TIME_SPLIT_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Random,
    Time,
    User,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Random => "random",
            Scenario::Time => "time",
            Scenario::User => "user",
        })
    }
}

impl FromStr for Scenario {
    type Err = MerfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Scenario::Random),
            "time" => Ok(Scenario::Time),
            "user" => Ok(Scenario::User),
            _ => Err(MerfError::InvalidArgument(format!(
                "unknown scenario '{s}' (expected random, time or user)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scenario: Scenario,
    pub folds: Vec<Fold>,
    pub seed: u64,
}

fn require_labelled(ds: &LongitudinalDataset) -> Result<()> {
    if ds.observations().iter().any(|o| o.target.is_none()) {
        return Err(MerfError::Split("dataset contains unlabelled rows".into()));
    }
    Ok(())
}

/// One fold with `⌊ratio · N⌋` training rows drawn without replacement.
pub fn make_random_split(ds: &LongitudinalDataset, ratio: f64, rng: &mut RngStream) -> Result<SplitPlan> {
    require_labelled(ds)?;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(MerfError::InvalidArgument(format!("train ratio {ratio} not in (0, 1)")));
    }
    let n = ds.len();
    let n_train = (ratio * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(MerfError::Split(format!("{n} rows at ratio {ratio} leave an empty side")));
    }
    let mut train = rng.sample_indices(n, n_train);
    train.sort_unstable();
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Ok(SplitPlan {
        scenario: Scenario::Random,
        folds: vec![Fold { train, test }],
        seed: rng.seed(),
    })
}

/// The first `k` visits of every cluster train; later visits test.
pub fn make_time_split(ds: &LongitudinalDataset, k: usize) -> Result<SplitPlan> {
    require_labelled(ds)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rows in ds.group_by_cluster()?.values() {
        let cut = k.min(rows.len());
        train.extend_from_slice(&rows[..cut]);
        test.extend_from_slice(&rows[cut..]);
    }
    if test.is_empty() {
        return Err(MerfError::Split(format!("every cluster has at most {k} observations")));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        scenario: Scenario::Time,
        folds: vec![Fold { train, test }],
        seed: 0,
    })
}

/// Leave-one-cluster-out folds in sorted cluster order.
pub fn make_user_split(ds: &LongitudinalDataset) -> Result<SplitPlan> {
    require_labelled(ds)?;
    let groups = ds.group_by_cluster()?;
    if groups.len() < 2 {
        return Err(MerfError::Split(format!("user split needs 2 clusters, found {}", groups.len())));
    }
    let folds = groups
        .keys()
        .map(|id| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..ds.len()).partition(|&i| &ds.observations()[i].cluster_id == id);
            Fold { train, test }
        })
        .collect();
    Ok(SplitPlan {
        scenario: Scenario::User,
        folds,
        seed: 0,
    })
}

/// The scenario's split with default parameters; `seed` only matters for
/// the random split.
pub fn make_split(ds: &LongitudinalDataset, scenario: Scenario, seed: u64) -> Result<SplitPlan> {
    let mut plan = match scenario {
        Scenario::Random => make_random_split(ds, DEFAULT_TRAIN_RATIO, &mut RngStream::new(seed, "eval/split"))?,
        Scenario::Time => make_time_split(ds, DEFAULT_TIME_SPLIT_K)?,
        Scenario::User => make_user_split(ds)?,
    };
    plan.seed = seed;
    Ok(plan)
}
