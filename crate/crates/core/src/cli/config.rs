//! Experiment configuration: one TOML document with a section per module.
//!
//! ```toml
//! seed = 7
//! out_dir = "runs/toy"
//!
//! [datamix]
//! n_classes = 3
//! clips_per_snr = 120
//! snr_levels = [20.0]
//! background = { kind = "pink", rms = 0.01 }
//!
//! [features]
//! n_mels = 32
//!
//! [model]
//! channel_widths = [8, 16, 32]
//! head = "2ap"
//!
//! [training]
//! max_epochs = 30
//!
//! [loss]
//! alpha = 0.001
//!
//! [metrics]
//! threshold = 0.5
//! ```
//!
//! `model.n_classes` and `model.n_mels` default to the datamix and feature
//! settings. Heads may be written as a bare name (`"2ap"`) or as a table
//! (`{ name = "gwrp", r = 0.9 }`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamix::CorpusConfig;
use crate::error::{Error, Result};
use crate::features::{config_hash, FeatureConfig};
use crate::model::ModelConfig;
use crate::training::{AblationConfig, LossConfig, TrainConfig, ALPHA_PRESETS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Decision threshold for the precision metrics.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { threshold: default_threshold() }
    }
}

fn default_loss() -> LossConfig {
    LossConfig { alpha: ALPHA_PRESETS[1] }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; when set it replaces `datamix.seed` and `training.seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Existing corpus written by `mix`. When absent the corpus lives in
    /// `<out>/corpus` and is generated on first use.
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
    pub datamix: CorpusConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default = "default_loss")]
    pub loss: LossConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        fill_model_defaults(&mut table);
        let cfg: ExperimentConfig =
            table.try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg.resolved())
    }

    /// Reads and validates a config file; an unreadable file is a config error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = &cfg.corpus_dir {
            if dir.is_relative() {
                cfg.corpus_dir = Some(path.parent().unwrap_or(Path::new("")).join(dir));
            }
        }
        Ok(cfg)
    }

    /// Applies the master seed to the sections that consume randomness.
    fn resolved(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.datamix.seed = seed;
            self.training.seed = seed;
        }
        self
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.datamix.seed = seed;
        self.training.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.datamix.validate()?;
        self.features.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        self.loss.validate()?;
        if self.model.n_classes != self.datamix.n_classes {
            return Err(Error::InvalidConfig(format!(
                "model.n_classes = {} but the corpus has {} classes",
                self.model.n_classes, self.datamix.n_classes
            )));
        }
        if self.model.n_mels != self.features.n_mels {
            return Err(Error::InvalidConfig(format!(
                "model.n_mels = {} but features.n_mels = {}",
                self.model.n_mels, self.features.n_mels
            )));
        }
        if self.features.sample_rate != self.datamix.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "features expect {} Hz audio, the corpus is mixed at {} Hz",
                self.features.sample_rate, self.datamix.sample_rate
            )));
        }
        let t = self.metrics.threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidConfig(format!("metrics.threshold must be in (0, 1), got {t}")));
        }
        if self.training.threshold != default_threshold() && self.training.threshold != t {
            return Err(Error::InvalidConfig(
                "conflicting thresholds; set it once, in [metrics]".into(),
            ));
        }
        if self.ablation.alphas.is_empty() || self.ablation.heads.is_empty() {
            return Err(Error::InvalidConfig("ablation needs at least one alpha and one head".into()));
        }
        for &a in &self.ablation.alphas {
            LossConfig { alpha: a }.validate()?;
        }
        if let Some(dir) = &self.corpus_dir {
            if !dir.join("manifest.json").is_file() {
                return Err(Error::InvalidConfig(format!(
                    "corpus_dir {} holds no manifest.json",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    /// Training settings with the metrics threshold applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { threshold: self.metrics.threshold, ..self.training.clone() }
    }

    /// Hex hash of the effective configuration, stamped on every output.
    pub fn hash(&self) -> String {
        format!("{:016x}", config_hash(self))
    }
}

/// Lets the model section omit what other sections already say, and accepts
/// bare head names.
fn fill_model_defaults(table: &mut toml::Table) {
    let n_classes = table
        .get("datamix")
        .and_then(|d| d.get("n_classes"))
        .cloned();
    let n_mels = table
        .get("features")
        .and_then(|f| f.get("n_mels"))
        .cloned()
        .unwrap_or(toml::Value::Integer(FeatureConfig::default().n_mels as i64));
    if let Some(toml::Value::Table(model)) = table.get_mut("model") {
        if let Some(k) = n_classes {
            model.entry("n_classes").or_insert(k);
        }
        model.entry("n_mels").or_insert(n_mels);
        if let Some(head) = model.get_mut("head") {
            expand_head(head);
        }
    }
    if let Some(toml::Value::Table(ablation)) = table.get_mut("ablation") {
        if let Some(toml::Value::Array(heads)) = ablation.get_mut("heads") {
            heads.iter_mut().for_each(expand_head);
        }
    }
}

fn expand_head(head: &mut toml::Value) {
    if let toml::Value::String(name) = head {
        let mut t = toml::Table::new();
        t.insert("name".into(), toml::Value::String(name.clone()));
        if name == "gwrp" {
            t.insert("r".into(), toml::Value::Float(crate::pooling::GwrpDecay::default().r));
        }
        *head = toml::Value::Table(t);
    }
}
