use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::FeatureSet;
use super::loss::{bce_grad, bce_loss, mse_grad, mse_loss, mtl_loss, LossConfig};
use crate::error::{Error, Result};
use crate::features::{config_hash, FeatureConfig, Standardizer};
use crate::metrics::{evaluate, EvalBatch, MetricsReport};
use crate::model::{Checkpoint, ModelConfig, ModelParams, ParamGroup, CHECKPOINT_FORMAT_VERSION};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fold: usize,
    /// Decision threshold for precision metrics.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Stop after this many epochs without a better checkpoint.
    #[serde(default)]
    pub patience: Option<usize>,
    /// Stop once validation AUC reaches this value.
    #[serde(default)]
    pub target_auc: Option<f64>,
    /// Multiply the learning rate by this factor after every epoch.
    #[serde(default)]
    pub lr_decay: Option<f64>,
}

fn default_batch() -> usize {
    8
}
fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    60
}
fn default_threshold() -> f64 {
    0.5
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch(),
            learning_rate: default_lr(),
            max_epochs: default_epochs(),
            seed: 0,
            fold: 0,
            threshold: default_threshold(),
            patience: None,
            target_auc: None,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if matches!(self.patience, Some(0)) {
            return bad("patience must be positive");
        }
        if let Some(d) = self.lr_decay {
            if !(d > 0.0 && d <= 1.0) {
                return bad("lr_decay must lie in (0, 1]");
            }
        }
        if let Some(a) = self.target_auc {
            if !(a > 0.0 && a <= 1.0) {
                return bad("target_auc must lie in (0, 1]");
            }
        }
        Ok(())
    }
}

/// One completed epoch. Training losses are means over the epoch's batches;
/// `train_l2` is absent when the decoder is not trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_l1: f64,
    pub train_l2: Option<f64>,
    pub train_total: f64,
    pub val_l1: f64,
    /// Reconstruction MSE on the validation fold, computed for every run.
    pub val_l2: f64,
    pub val_micro_precision: f64,
    pub val_macro_precision: f64,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn best_auc(&self) -> Option<f64> {
        self.epochs.iter().filter_map(|e| e.val_auc).reduce(f64::max)
    }

    /// Columns: epoch, lr, train_l1, train_l2, train_total, val_l1, val_l2,
    /// val_micro_p, val_macro_p, val_auc. Absent values are empty cells.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "epoch", "lr", "train_l1", "train_l2", "train_total", "val_l1", "val_l2", "val_micro_p",
            "val_macro_p", "val_auc",
        ])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.learning_rate.to_string(),
                e.train_l1.to_string(),
                opt(e.train_l2),
                e.train_total.to_string(),
                e.val_l1.to_string(),
                e.val_l2.to_string(),
                e.val_micro_precision.to_string(),
                e.val_macro_precision.to_string(),
                opt(e.val_auc),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything needed to reproduce or audit a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub crate_version: String,
    pub config_hash: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub features: FeatureConfig,
    pub feature_source_hash: String,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub param_count: usize,
    pub environment: String,
    pub conventions: BTreeMap<String, String>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub manifest: RunManifest,
}

impl TrainOutcome {
    /// Writes `checkpoint.json`, `history.csv` and `run.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.checkpoint.save(dir.join("checkpoint.json"))?;
        self.history.save_csv(dir.join("history.csv"))?;
        std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }
}

/// Probabilities for the given clips and, optionally, their mean
/// reconstruction error. Runs in evaluation mode.
pub fn predict(
    model: &ModelParams,
    standardizer: &Standardizer,
    features: &FeatureSet,
    indices: &[usize],
    batch_size: usize,
    with_reconstruction: bool,
) -> Result<(Array2<f64>, Option<f64>)> {
    let mut probs = Array2::zeros((indices.len(), features.n_classes()));
    let mut sq_err = 0.0;
    let mut count = 0usize;
    for (c, chunk) in indices.chunks(batch_size.max(1)).enumerate() {
        let (x, _) = features.batch(chunk, standardizer)?;
        let out = model.forward(x.view(), with_reconstruction)?;
        let start = c * batch_size.max(1);
        probs.slice_mut(s![start..start + chunk.len(), ..]).assign(&out.predictions);
        if let Some(r) = &out.reconstruction {
            sq_err += mse_loss(r.view(), x.view())? * x.len() as f64;
            count += x.len();
        }
    }
    let mse = (with_reconstruction && count > 0).then(|| sq_err / count as f64);
    Ok((probs, mse))
}

fn check_compatible(model: &ModelConfig, features: &FeatureSet) -> Result<()> {
    if model.n_mels != features.n_mels() || model.n_classes != features.n_classes() {
        return Err(Error::InvalidConfig(format!(
            "model expects {} classes over {} mel bins, corpus features have {} classes over {}",
            model.n_classes,
            model.n_mels,
            features.n_classes(),
            features.n_mels()
        )));
    }
    Ok(())
}

fn metrics_map(report: &MetricsReport, val_l1: f64, val_l2: f64) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::from([
        ("micro_precision".to_string(), report.micro_precision),
        ("macro_precision".to_string(), report.macro_precision),
        ("val_l1".to_string(), val_l1),
        ("val_l2".to_string(), val_l2),
    ]);
    if let Some(a) = report.auc {
        m.insert("auc".to_string(), a);
    }
    m
}

pub fn train_fold(
    features: &FeatureSet,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainOutcome> {
    train_fold_with(features, model_cfg, cfg, loss_cfg, |_| {})
}

/// [`train_fold`] with a callback after every epoch.
pub fn train_fold_with<F: FnMut(&EpochRecord)>(
    features: &FeatureSet,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    model_cfg.validate()?;
    check_compatible(model_cfg, features)?;
    let (mut train_idx, val_idx) = features.split(cfg.fold)?;
    if val_idx.is_empty() {
        return Err(Error::InvalidConfig(format!("fold {} holds no validation clips", cfg.fold)));
    }
    let standardizer = features.fit_standardizer(&train_idx)?;
    let val_labels = features.labels.select(Axis(0), &val_idx);
    let val_targets = val_labels.mapv(f64::from);

    let mut model = ModelParams::init(model_cfg, cfg.seed)?;
    let reconstruct = loss_cfg.uses_decoder();
    let frozen = if reconstruct { Vec::new() } else { vec![ParamGroup::Decoder] };
    let mut adam = Adam::new(
        AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() },
        &model,
        frozen,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let hash = format!(
        "{:016x}",
        config_hash(&(model_cfg, cfg, loss_cfg, &features.config, features.source_hash))
    );
    let mut history = TrainHistory::default();
    let mut best: Option<(ModelParams, usize, (f64, f64), BTreeMap<String, f64>)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        train_idx.shuffle(&mut shuffle_rng);
        let (mut sum_l1, mut sum_l2, mut sum_total, mut n_batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in train_idx.chunks(cfg.batch_size) {
            let (x, y) = features.batch(chunk, &standardizer)?;
            let (out, trace) = model.forward_train(x.view(), reconstruct)?;
            let recon_pair = out.reconstruction.as_ref().map(|r| (r.view(), x.view()));
            let loss = mtl_loss(out.predictions.view(), y.view(), recon_pair, loss_cfg)?;
            if !loss.total.is_finite() {
                return Err(Error::TrainingFailure {
                    epoch,
                    detail: format!("loss became {}", loss.total),
                });
            }
            let d_probs = bce_grad(out.predictions.view(), y.view())?;
            let d_recon = match &out.reconstruction {
                Some(r) => Some(mse_grad(r.view(), x.view())? * loss_cfg.alpha),
                None => None,
            };
            let grads = model.backward(&trace, d_probs.view(), d_recon.as_ref().map(|d| d.view()))?;
            adam.step(&mut model, &grads)?;
            model.update_running_stats(&trace);
            sum_l1 += loss.classification;
            sum_l2 += loss.reconstruction.unwrap_or(0.0);
            sum_total += loss.total;
            n_batches += 1;
        }
        if !model.is_finite() {
            return Err(Error::TrainingFailure { epoch, detail: "parameters became non-finite".into() });
        }

        let (val_probs, val_l2) = predict(&model, &standardizer, features, &val_idx, cfg.batch_size, true)?;
        let val_l2 = val_l2.expect("reconstruction was requested");
        let val_l1 = bce_loss(val_probs.view(), val_targets.view())?;
        if !val_l1.is_finite() || !val_l2.is_finite() {
            return Err(Error::TrainingFailure { epoch, detail: "validation loss is non-finite".into() });
        }
        let report = evaluate(&EvalBatch::new(val_probs, val_labels.clone())?, cfg.threshold, &[])?;
        let nb = n_batches as f64;
        let record = EpochRecord {
            epoch,
            learning_rate: adam.config.learning_rate,
            train_l1: sum_l1 / nb,
            train_l2: reconstruct.then(|| sum_l2 / nb),
            train_total: sum_total / nb,
            val_l1,
            val_l2,
            val_micro_precision: report.micro_precision,
            val_macro_precision: report.macro_precision,
            val_auc: report.auc,
        };
        on_epoch(&record);
        history.epochs.push(record);

        // Best micro precision, ties broken by AUC, then by the earlier epoch.
        let key = (report.micro_precision, report.auc.unwrap_or(0.0));
        if best.as_ref().is_none_or(|b| key > b.2) {
            best = Some((model.clone(), epoch, key, metrics_map(&report, val_l1, val_l2)));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if let Some(d) = cfg.lr_decay {
            adam.config.learning_rate *= d;
        }
        if cfg.target_auc.is_some_and(|t| report.auc.is_some_and(|a| a >= t)) {
            break;
        }
        if cfg.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }

    let (best_model, best_epoch, _, best_metrics) = best.expect("at least one epoch ran");
    let manifest = RunManifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: hash.clone(),
        model: model_cfg.clone(),
        train: cfg.clone(),
        loss: *loss_cfg,
        features: features.config.clone(),
        feature_source_hash: format!("{:016x}", features.source_hash),
        init_seed: cfg.seed,
        shuffle_seed: cfg.seed,
        param_count: best_model.param_count(),
        environment: format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH),
        conventions: BTreeMap::from([
            ("loss_reduction".into(), "mean over batch and classes".into()),
            ("bce_clamp".into(), "probabilities clamped to [1e-7, 1 - 1e-7]".into()),
            (
                "init".into(),
                "convolutions and linear maps uniform in +-1/sqrt(fan_in), biases zero, batch-norm affine identity".into(),
            ),
            ("selection".into(), "best validation micro precision, ties by AUC".into()),
            ("shuffle".into(), "ChaCha8 stream 1 of the run seed, reshuffled every epoch".into()),
        ]),
        epochs_run: history.epochs.len(),
        best_epoch,
        best_metrics: best_metrics.clone(),
    };
    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model: best_model,
        standardizer,
        features: features.config.clone(),
        seed: cfg.seed,
        alpha: loss_cfg.alpha,
        fold: cfg.fold,
        head: model_cfg.head.name().to_string(),
        epoch: best_epoch,
        metrics: best_metrics,
        config_hash: hash,
    };
    Ok(TrainOutcome { checkpoint, history, manifest })
}

/// Runs a checkpoint over one fold and scores it.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    features: &FeatureSet,
    fold: usize,
    threshold: f64,
) -> Result<MetricsReport> {
    if checkpoint.features != features.config {
        return Err(Error::InvalidConfig("checkpoint was trained with different feature settings".into()));
    }
    check_compatible(&checkpoint.model.config, features)?;
    if fold >= features.n_folds {
        return Err(Error::InvalidConfig(format!(
            "fold {fold} does not exist; the corpus has {} folds",
            features.n_folds
        )));
    }
    let idx: Vec<usize> = (0..features.len()).filter(|&i| features.folds[i] == fold).collect();
    let (probs, _) = predict(&checkpoint.model, &checkpoint.standardizer, features, &idx, 16, false)?;
    let labels = features.labels.select(Axis(0), &idx);
    evaluate(&EvalBatch::new(probs, labels)?, threshold, &[])
}
