//! Versioned binary storage for fitted models.
//!
//! Layout: 8 magic bytes, a little-endian `u32` format version, then the
//! bincode encoding of [`ModelContainer`].

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::BaselineModel;
use crate::dataset::LongitudinalDataset;
use crate::error::{MerfError, Result};
use crate::evaluation::ModelKind;
use crate::forest::RandomForestModel;
use crate::merf::MerfModel;

pub const MAGIC: &[u8; 8] = b"MERFMDL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StoredModel {
    Merf(MerfModel),
    Forest(RandomForestModel),
    Baseline(BaselineModel),
}

impl StoredModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            StoredModel::Merf(_) => ModelKind::Merf,
            StoredModel::Forest(_) => ModelKind::Forest,
            StoredModel::Baseline(b) => ModelKind::Baseline(b.kind),
        }
    }

    /// Feature count the model expects, if it uses features at all.
    pub fn n_features(&self) -> Option<usize> {
        match self {
            StoredModel::Merf(m) => Some(m.n_features()),
            StoredModel::Forest(f) => Some(f.n_features()),
            StoredModel::Baseline(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelContainer {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub payload: StoredModel,
    /// JSON of the configuration the model was fitted with.
    pub config_echo: String,
    /// Hex SHA-256 of the training data in canonical CSV form.
    pub dataset_fingerprint: String,
}

/// Hex SHA-256 of the dataset's canonical CSV encoding.
pub fn dataset_fingerprint(ds: &LongitudinalDataset) -> Result<String> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    ds.write_meta_csv(&mut buf)?;
    Ok(Sha256::digest(&buf).iter().map(|b| format!("{b:02x}")).collect())
}

impl ModelContainer {
    pub fn new(payload: StoredModel, config_echo: String, dataset_fingerprint: String) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model_kind: payload.kind(),
            payload,
            config_echo,
            dataset_fingerprint,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        bincode::serialize_into(&mut out, self).map_err(|e| MerfError::Container(e.to_string()))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(MerfError::Container("not a model container (bad magic bytes)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(MerfError::Container(format!(
                "unsupported format version {version} (this build reads {FORMAT_VERSION})"
            )));
        }
        let c: Self = bincode::deserialize(&bytes[12..]).map_err(|e| MerfError::Container(e.to_string()))?;
        if c.format_version != version || c.model_kind != c.payload.kind() {
            return Err(MerfError::Container("inconsistent container header".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
