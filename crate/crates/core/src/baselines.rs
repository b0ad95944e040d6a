//! Simple per-group and per-cluster predictors used as comparison models.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::LongitudinalDataset;
use crate::error::{MerfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    GroupMean,
    GroupMedian,
    PatientMean,
    PatientMedian,
    PatientScreen,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::GroupMean,
        BaselineKind::GroupMedian,
        BaselineKind::PatientMean,
        BaselineKind::PatientMedian,
        BaselineKind::PatientScreen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::GroupMean => "group_mean",
            BaselineKind::GroupMedian => "group_median",
            BaselineKind::PatientMean => "patient_mean",
            BaselineKind::PatientMedian => "patient_median",
            BaselineKind::PatientScreen => "patient_screen",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = MerfError;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| MerfError::InvalidArgument(format!("unknown baseline '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    pub group_value: f64,
    pub per_cluster_value: BTreeMap<String, f64>,
    pub screen_value: BTreeMap<String, f64>,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median; an even count takes the mean of the two middle values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn fit_baseline(kind: BaselineKind, train: &LongitudinalDataset) -> Result<BaselineModel> {
    let targets = train.targets()?;
    if targets.is_empty() {
        return Err(MerfError::NoLabelled);
    }
    let stat: fn(&[f64]) -> f64 = match kind {
        BaselineKind::GroupMedian | BaselineKind::PatientMedian => median,
        _ => mean,
    };
    let group_value = stat(&targets);
    if !group_value.is_finite() {
        return Err(MerfError::Dataset("baseline group value is not finite".into()));
    }

    let mut per_cluster_value = BTreeMap::new();
    if matches!(kind, BaselineKind::PatientMean | BaselineKind::PatientMedian) {
        for (id, rows) in train.group_by_cluster()? {
            let ys: Vec<f64> = rows.iter().map(|&i| targets[i]).collect();
            per_cluster_value.insert(id, stat(&ys));
        }
    }
    let screen_value = if kind == BaselineKind::PatientScreen {
        train
            .cluster_meta()
            .iter()
            .filter_map(|m| m.screen_score.map(|s| (m.cluster_id.clone(), s)))
            .collect()
    } else {
        BTreeMap::new()
    };
    Ok(BaselineModel {
        kind,
        group_value,
        per_cluster_value,
        screen_value,
    })
}

impl BaselineModel {
    /// Prediction for any row of `cluster_id`.
    pub fn predict_cluster(&self, cluster_id: &str) -> Result<f64> {
        match self.kind {
            BaselineKind::GroupMean | BaselineKind::GroupMedian => Ok(self.group_value),
            BaselineKind::PatientMean | BaselineKind::PatientMedian => {
                Ok(match self.per_cluster_value.get(cluster_id) {
                    Some(&v) => v,
                    None => {
                        log::warn!("{}: cluster {cluster_id} not in training, using group value", self.kind);
                        self.group_value
                    }
                })
            }
            BaselineKind::PatientScreen => self
                .screen_value
                .get(cluster_id)
                .copied()
                .ok_or_else(|| MerfError::MissingScreen(cluster_id.to_owned())),
        }
    }

    pub fn predict<S: AsRef<str>>(&self, cluster_ids: &[S]) -> Result<Vec<f64>> {
        cluster_ids.iter().map(|c| self.predict_cluster(c.as_ref())).collect()
    }
}

pub fn predict_baseline<S: AsRef<str>>(model: &BaselineModel, cluster_ids: &[S]) -> Result<Vec<f64>> {
    model.predict(cluster_ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ClusterMeta, Observation};

    fn ds(rows: &[(&str, f64)], meta: Vec<ClusterMeta>) -> LongitudinalDataset {
        let mut visits: BTreeMap<&str, u64> = BTreeMap::new();
        let obs = rows
            .iter()
            .map(|&(c, y)| {
                let v = visits.entry(c).or_insert(0);
                *v += 1;
                Observation {
                    cluster_id: c.into(),
                    visit: *v,
                    features: vec![Some(0.0)],
                    target: Some(y),
                }
            })
            .collect();
        LongitudinalDataset::new(obs, 1, meta, None).unwrap()
    }

    #[test]
    fn group_statistics() {
        let d = ds(&[("a", 1.0), ("a", 2.0), ("b", 9.0)], vec![]);
        assert_eq!(fit_baseline(BaselineKind::GroupMean, &d).unwrap().group_value, 4.0);
        assert_eq!(fit_baseline(BaselineKind::GroupMedian, &d).unwrap().group_value, 2.0);
    }

    #[test]
    fn patient_mean_per_cluster() {
        let d = ds(&[("A", 1.0), ("A", 3.0), ("B", 5.0)], vec![]);
        let m = fit_baseline(BaselineKind::PatientMean, &d).unwrap();
        assert_eq!(m.per_cluster_value["A"], 2.0);
        assert_eq!(m.per_cluster_value["B"], 5.0);
    }

    #[test]
    fn even_count_median() {
        assert_eq!(median(&[1.0, 3.0]), 2.0);
        assert_eq!(median(&[3.0, 1.0, 7.0, 5.0]), 4.0);
    }

    #[test]
    fn patient_screen_prediction() {
        let meta = vec![ClusterMeta { cluster_id: "A".into(), screen_score: Some(19.0) }];
        let d = ds(&[("A", 1.0), ("A", 3.0)], meta);
        let m = fit_baseline(BaselineKind::PatientScreen, &d).unwrap();
        assert_eq!(m.predict(&["A", "A"]).unwrap(), vec![19.0, 19.0]);
    }

    #[test]
    fn patient_screen_missing_errors_at_predict() {
        let d = ds(&[("A", 1.0)], vec![]);
        let m = fit_baseline(BaselineKind::PatientScreen, &d).unwrap();
        match m.predict(&["A"]) {
            Err(MerfError::MissingScreen(c)) => assert_eq!(c, "A"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unseen_cluster_falls_back_to_group_mean() {
        let d = ds(&[("A", 1.0), ("A", 3.0), ("B", 5.0)], vec![]);
        let m = fit_baseline(BaselineKind::PatientMean, &d).unwrap();
        assert_eq!(m.predict(&["Z"]).unwrap(), vec![3.0]);
    }

    #[test]
    fn group_median_constant() {
        let d = ds(&[("A", 1.0), ("A", 3.0), ("B", 5.0)], vec![]);
        let m = fit_baseline(BaselineKind::GroupMedian, &d).unwrap();
        assert_eq!(m.predict(&["A", "B", "Q"]).unwrap(), vec![3.0; 3]);
    }

    #[test]
    fn single_observation_clusters_reproduced() {
        let d = ds(&[("A", 1.5), ("B", 7.0), ("C", -2.0)], vec![]);
        let m = fit_baseline(BaselineKind::PatientMean, &d).unwrap();
        assert_eq!(m.predict(&["A", "B", "C"]).unwrap(), vec![1.5, 7.0, -2.0]);
    }

    #[test]
    fn single_cluster_group_equals_patient() {
        let d = ds(&[("A", 1.0), ("A", 4.0), ("A", 10.0)], vec![]);
        for (g, p) in [
            (BaselineKind::GroupMean, BaselineKind::PatientMean),
            (BaselineKind::GroupMedian, BaselineKind::PatientMedian),
        ] {
            let g = fit_baseline(g, &d).unwrap().predict(&["A"]).unwrap();
            let p = fit_baseline(p, &d).unwrap().predict(&["A"]).unwrap();
            assert_eq!(g, p);
        }
    }

    #[test]
    fn parse_names() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("nope".parse::<BaselineKind>().is_err());
    }
}
