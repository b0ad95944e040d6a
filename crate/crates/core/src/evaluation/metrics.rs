use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MerfError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantErrors {
    pub per_cluster_mae: BTreeMap<String, f64>,
    /// Mean absolute error over all test rows, not over clusters.
    pub group_mae: f64,
    pub n_test_per_cluster: BTreeMap<String, usize>,
}

fn check_lengths(pred: &[f64], actual: &[f64]) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(MerfError::Dimension(format!(
            "{} predictions for {} targets",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(MerfError::InvalidArgument("no predictions to score".into()));
    }
    Ok(())
}

pub fn group_mae(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn participant_mae<S: AsRef<str>>(
    pred: &[f64],
    actual: &[f64],
    cluster_ids: &[S],
) -> Result<BTreeMap<String, f64>> {
    Ok(participant_errors(pred, actual, cluster_ids)?.per_cluster_mae)
}

pub fn participant_errors<S: AsRef<str>>(pred: &[f64], actual: &[f64], cluster_ids: &[S]) -> Result<ParticipantErrors> {
    check_lengths(pred, actual)?;
    if cluster_ids.len() != pred.len() {
        return Err(MerfError::Dimension(format!(
            "{} cluster ids for {} predictions",
            cluster_ids.len(),
            pred.len()
        )));
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ((p, a), c) in pred.iter().zip(actual).zip(cluster_ids) {
        let e = sums.entry(c.as_ref().to_owned()).or_insert((0.0, 0));
        e.0 += (p - a).abs();
        e.1 += 1;
    }
    Ok(ParticipantErrors {
        per_cluster_mae: sums.iter().map(|(c, &(s, n))| (c.clone(), s / n as f64)).collect(),
        n_test_per_cluster: sums.into_iter().map(|(c, (_, n))| (c, n)).collect(),
        group_mae: group_mae(pred, actual)?,
    })
}

/// Per cluster, baseline MAE minus model MAE.
pub fn user_lift(pbl: &BTreeMap<String, f64>, merf: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    if pbl.len() != merf.len() || pbl.keys().zip(merf.keys()).any(|(a, b)| a != b) {
        return Err(MerfError::InvalidArgument("user lift inputs cover different clusters".into()));
    }
    Ok(pbl.iter().map(|(c, b)| (c.clone(), b - merf[c])).collect())
}

pub fn worst_case_error(per_cluster_mae: &BTreeMap<String, f64>) -> Result<f64> {
    per_cluster_mae
        .values()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| MerfError::InvalidArgument("no clusters to take a worst case over".into()))
}
