//! Checkpoints are a single JSON document. Every float is written with
//! round-trip precision, so a reloaded model is bit-identical.
//!
//! Top-level keys: `format_version`, `model` (config echo and all
//! parameters, batch-norm running statistics included), `standardizer`,
//! `features`, `seed`, `alpha`, `fold`, `head`, `epoch`, `metrics` and
//! `config_hash`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, Standardizer};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelParams,
    pub standardizer: Standardizer,
    pub features: FeatureConfig,
    pub seed: u64,
    pub alpha: f64,
    pub fold: usize,
    /// Name of the pooling head, e.g. `"2ap"`.
    pub head: String,
    /// Epoch (1-based) whose parameters were kept.
    pub epoch: usize,
    /// Validation metrics at that epoch.
    pub metrics: BTreeMap<String, f64>,
    /// Hash of the run configuration that produced the checkpoint.
    pub config_hash: String,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!(
                    "checkpoint format {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                    ckpt.format_version
                ),
            });
        }
        ckpt.model.config.validate()?;
        if ckpt.standardizer.mean.len() != ckpt.model.config.n_mels
            || ckpt.features.n_mels != ckpt.model.config.n_mels
        {
            return Err(Error::InvalidConfig(
                "checkpoint feature settings disagree with its model".into(),
            ));
        }
        Ok(ckpt)
    }
}
