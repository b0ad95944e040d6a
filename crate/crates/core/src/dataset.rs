//! Clustered repeated-measures data: observations keyed by cluster and visit,
//! optional per-cluster metadata, CSV ingestion and the preprocessing steps
//! applied before fitting (missing-value imputation, filtering to labelled
//! rows).
//!
//! Observations CSV:
//!
//! ```text
//! cluster_id,visit,target,f0,f1,...,f{p-1}
//! ```
//!
//! An empty `target` cell marks an unlabelled row; an empty or `NA` feature
//! cell marks a missing value. The `visit` column holds non-negative integer
//! ranks; ISO `YYYY-MM-DD` dates are also accepted and mapped to dense ranks
//! per cluster. The metadata CSV has the header `cluster_id,screen_score`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MerfError, Result};
use crate::numerics::Matrix;

/// Total score range of the 17-item Hamilton Depression Rating Scale.
pub const HDRS17_RANGE: (f64, f64) = (0.0, 52.0);

/// Value written in place of missing features by [`LongitudinalDataset::impute_missing`].
pub const DEFAULT_MISSING_SENTINEL: f64 = -1.0;

const MISSING_TOKEN: &str = "NA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub cluster_id: String,
    /// Temporal order within the cluster.
    pub visit: u64,
    /// `None` marks a missing cell.
    pub features: Vec<Option<f64>>,
    /// `None` for unlabelled rows.
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMeta {
    pub cluster_id: String,
    pub screen_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDataset {
    observations: Vec<Observation>,
    p: usize,
    cluster_meta: Vec<ClusterMeta>,
    target_range: Option<(f64, f64)>,
}

impl LongitudinalDataset {
    /// Validates and assembles a dataset.
    ///
    /// Every observation must carry `p` features, metadata ids must be unique,
    /// and when metadata is non-empty it must cover every observed cluster.
    pub fn new(
        observations: Vec<Observation>,
        p: usize,
        cluster_meta: Vec<ClusterMeta>,
        target_range: Option<(f64, f64)>,
    ) -> Result<Self> {
        for (i, obs) in observations.iter().enumerate() {
            if obs.features.len() != p {
                return Err(MerfError::Dataset(format!(
                    "observation {i} has {} features, expected {p}",
                    obs.features.len()
                )));
            }
            if obs.features.iter().flatten().any(|v| !v.is_finite()) {
                return Err(MerfError::Dataset(format!("observation {i} has a non-finite feature")));
            }
            if let Some(t) = obs.target {
                if !t.is_finite() {
                    return Err(MerfError::Dataset(format!("observation {i} has a non-finite target")));
                }
            }
        }
        let mut seen = HashSet::new();
        for meta in &cluster_meta {
            if !seen.insert(meta.cluster_id.as_str()) {
                return Err(MerfError::Dataset(format!(
                    "duplicate metadata for cluster {}",
                    meta.cluster_id
                )));
            }
        }
        if !cluster_meta.is_empty() {
            if let Some(obs) = observations.iter().find(|o| !seen.contains(o.cluster_id.as_str())) {
                return Err(MerfError::Dataset(format!(
                    "cluster {} has no metadata record",
                    obs.cluster_id
                )));
            }
        }
        let ds = Self {
            observations,
            p,
            cluster_meta,
            target_range: None,
        };
        match target_range {
            Some(range) => ds.with_target_range(range),
            None => Ok(ds),
        }
    }

    /// Attaches a valid target range, checking every labelled row against it.
    pub fn with_target_range(mut self, (lo, hi): (f64, f64)) -> Result<Self> {
        if !(lo <= hi) {
            return Err(MerfError::Dataset(format!("empty target range [{lo}, {hi}]")));
        }
        if let Some((i, t)) = self
            .observations
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.target.map(|t| (i, t)))
            .find(|&(_, t)| t < lo || t > hi)
        {
            return Err(MerfError::Dataset(format!(
                "observation {i}: target {t} outside [{lo}, {hi}]"
            )));
        }
        self.target_range = Some((lo, hi));
        Ok(self)
    }

    pub fn with_meta(self, cluster_meta: Vec<ClusterMeta>) -> Result<Self> {
        Self::new(self.observations, self.p, cluster_meta, self.target_range)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Feature count.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn cluster_meta(&self) -> &[ClusterMeta] {
        &self.cluster_meta
    }

    pub fn target_range(&self) -> Option<(f64, f64)> {
        self.target_range
    }

    pub fn screen_score(&self, cluster_id: &str) -> Option<f64> {
        self.cluster_meta
            .iter()
            .find(|m| m.cluster_id == cluster_id)
            .and_then(|m| m.screen_score)
    }

    /// Distinct cluster ids in sorted order.
    pub fn cluster_ids(&self) -> Vec<String> {
        self.observations
            .iter()
            .map(|o| o.cluster_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_owned)
            .collect()
    }

    pub fn missing_count(&self) -> usize {
        self.observations
            .iter()
            .map(|o| o.features.iter().filter(|v| v.is_none()).count())
            .sum()
    }

    /// Replaces every missing feature cell with `sentinel`.
    pub fn impute_missing(&self, sentinel: f64) -> Self {
        let mut out = self.clone();
        for obs in &mut out.observations {
            for cell in &mut obs.features {
                cell.get_or_insert(sentinel);
            }
        }
        out
    }

    /// Keeps only rows with a target.
    pub fn filter_labeled(&self) -> Result<Self> {
        let observations: Vec<Observation> = self
            .observations
            .iter()
            .filter(|o| o.target.is_some())
            .cloned()
            .collect();
        if observations.is_empty() {
            return Err(MerfError::NoLabelled);
        }
        Ok(Self {
            observations,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        Self {
            observations: Vec::new(),
            p: self.p,
            cluster_meta: self.cluster_meta.clone(),
            target_range: self.target_range,
        }
    }

    /// Row indices per cluster, each list ordered by visit.
    pub fn group_by_cluster(&self) -> Result<BTreeMap<String, Vec<usize>>> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, obs) in self.observations.iter().enumerate() {
            groups.entry(obs.cluster_id.clone()).or_default().push(i);
        }
        for (cluster, idx) in &mut groups {
            idx.sort_by_key(|&i| self.observations[i].visit);
            if let Some(w) = idx
                .windows(2)
                .find(|w| self.observations[w[0]].visit == self.observations[w[1]].visit)
            {
                return Err(MerfError::DuplicateVisit {
                    cluster: cluster.clone(),
                    visit: self.observations[w[0]].visit,
                });
            }
        }
        Ok(groups)
    }

    /// The dataset restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            observations: indices.iter().map(|&i| self.observations[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    /// Dense `N × p` feature matrix; fails while missing cells remain.
    pub fn design_matrix(&self) -> Result<Matrix> {
        let mut data = Vec::with_capacity(self.len() * self.p);
        for (i, obs) in self.observations.iter().enumerate() {
            for cell in &obs.features {
                data.push(cell.ok_or_else(|| {
                    MerfError::Dataset(format!(
                        "observation {i} has missing features; impute them first"
                    ))
                })?);
            }
        }
        Matrix::from_vec(self.len(), self.p, data)
    }

    /// All targets; fails on unlabelled rows.
    pub fn targets(&self) -> Result<Vec<f64>> {
        self.observations
            .iter()
            .map(|o| o.target.ok_or(MerfError::NoLabelled))
            .collect()
    }

    pub fn cluster_column(&self) -> Vec<&str> {
        self.observations.iter().map(|o| o.cluster_id.as_str()).collect()
    }

    /// Writes the observations CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header = vec!["cluster_id".to_owned(), "visit".into(), "target".into()];
        header.extend((0..self.p).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for obs in &self.observations {
            let mut rec = Vec::with_capacity(3 + self.p);
            rec.push(obs.cluster_id.clone());
            rec.push(obs.visit.to_string());
            rec.push(obs.target.map(|t| t.to_string()).unwrap_or_default());
            rec.extend(
                obs.features
                    .iter()
                    .map(|c| c.map_or_else(|| MISSING_TOKEN.to_owned(), |v| v.to_string())),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the metadata CSV.
    pub fn write_meta_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_meta_csv(&self.cluster_meta, writer)
    }

    pub fn save_csv(&self, obs_path: &Path, meta_path: Option<&Path>) -> Result<()> {
        self.write_csv(File::create(obs_path)?)?;
        if let Some(meta_path) = meta_path {
            self.write_meta_csv(File::create(meta_path)?)?;
        }
        Ok(())
    }
}

pub fn write_meta_csv<W: Write>(meta: &[ClusterMeta], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(["cluster_id", "screen_score"])?;
    for m in meta {
        w.write_record([
            m.cluster_id.clone(),
            m.screen_score.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Loads observations (and optionally cluster metadata) from CSV files.
pub fn load_csv(obs_path: &Path, meta_path: Option<&Path>) -> Result<LongitudinalDataset> {
    let meta = match meta_path {
        Some(path) => read_meta_csv(File::open(path)?)?,
        None => Vec::new(),
    };
    let (observations, p) = read_observations_csv(File::open(obs_path)?)?;
    LongitudinalDataset::new(observations, p, meta, None)
}

fn parse_error(row: usize, msg: impl std::fmt::Display) -> MerfError {
    MerfError::Parse(format!("row {row}: {msg}"))
}

fn parse_real(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses an observations CSV. Returns the rows and the feature count.
pub fn read_observations_csv<R: Read>(reader: R) -> Result<(Vec<Observation>, usize)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let p = check_header(&header)?;

    let mut observations = Vec::new();
    let mut raw_visits = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != 3 + p {
            return Err(parse_error(
                row,
                format!("expected {p} features, found {}", rec.len().saturating_sub(3)),
            ));
        }
        let cluster_id = rec[0].trim().to_owned();
        if cluster_id.is_empty() {
            return Err(parse_error(row, "empty cluster_id"));
        }
        let target = match rec[2].trim() {
            "" => None,
            cell => Some(parse_real(cell).ok_or_else(|| parse_error(row, format!("non-numeric target {cell:?}")))?),
        };
        let features = rec
            .iter()
            .skip(3)
            .enumerate()
            .map(|(j, cell)| match cell.trim() {
                "" | MISSING_TOKEN => Ok(None),
                cell => parse_real(cell)
                    .map(Some)
                    .ok_or_else(|| parse_error(row, format!("non-numeric value {cell:?} in f{j}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        raw_visits.push(rec[1].trim().to_owned());
        observations.push(Observation {
            cluster_id,
            visit: 0,
            features,
            target,
        });
    }
    let visits = resolve_visits(&observations, &raw_visits)?;
    for (obs, visit) in observations.iter_mut().zip(visits) {
        obs.visit = visit;
    }
    Ok((observations, p))
}

fn check_header(header: &csv::StringRecord) -> Result<usize> {
    let fixed = ["cluster_id", "visit", "target"];
    let bad = || {
        MerfError::Parse(format!(
            "malformed header {:?}: expected cluster_id,visit,target,f0,...",
            header.iter().collect::<Vec<_>>()
        ))
    };
    if header.len() < 3 || header.iter().zip(fixed).any(|(h, f)| h.trim() != f) {
        return Err(bad());
    }
    let p = header.len() - 3;
    for (j, name) in header.iter().skip(3).enumerate() {
        if name.trim() != format!("f{j}") {
            return Err(bad());
        }
    }
    Ok(p)
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter().enumerate().all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
}

fn resolve_visits(observations: &[Observation], raw: &[String]) -> Result<Vec<u64>> {
    if let Ok(visits) = raw.iter().map(|v| v.parse::<u64>()).collect::<Result<Vec<_>, _>>() {
        return Ok(visits);
    }
    if let Some(i) = raw.iter().position(|v| !is_iso_date(v)) {
        return Err(parse_error(
            i + 1,
            format!("visit {:?} is neither a non-negative integer nor a YYYY-MM-DD date", raw[i]),
        ));
    }
    // ISO dates sort lexicographically in time order
    let mut per_cluster: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (obs, date) in observations.iter().zip(raw) {
        per_cluster.entry(&obs.cluster_id).or_default().insert(date);
    }
    Ok(observations
        .iter()
        .zip(raw)
        .map(|(obs, date)| {
            let dates = &per_cluster[obs.cluster_id.as_str()];
            dates.range::<&str, _>(..date.as_str()).count() as u64 + 1
        })
        .collect())
}

/// Parses a metadata CSV (`cluster_id,screen_score`).
pub fn read_meta_csv<R: Read>(reader: R) -> Result<Vec<ClusterMeta>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != 2 || header[0].trim() != "cluster_id" || header[1].trim() != "screen_score" {
        return Err(MerfError::Parse(format!(
            "malformed metadata header {:?}: expected cluster_id,screen_score",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != 2 {
            return Err(parse_error(row, format!("expected 2 columns, found {}", rec.len())));
        }
        let screen_score = match rec[1].trim() {
            "" | MISSING_TOKEN => None,
            cell => Some(parse_real(cell).ok_or_else(|| parse_error(row, format!("non-numeric screen_score {cell:?}")))?),
        };
        out.push(ClusterMeta {
            cluster_id: rec[0].trim().to_owned(),
            screen_score,
        });
    }
    Ok(out)
}
