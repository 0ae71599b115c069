use std::fmt::Write as _;
use std::path::Path;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::data::FeatureSet;
use super::loss::LossConfig;
use super::trainer::{predict, train_fold_with, EpochRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalBatch};
use crate::model::{ModelConfig, ModelParams};
use crate::pooling::HeadKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_heads")]
    pub heads: Vec<HeadKind>,
    /// Folds to run; all folds when absent.
    #[serde(default)]
    pub folds: Option<Vec<usize>>,
}

fn default_alphas() -> Vec<f64> {
    super::loss::ALPHA_PRESETS.to_vec()
}
fn default_heads() -> Vec<HeadKind> {
    vec![HeadKind::TwoStepAttention]
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { alphas: default_alphas(), heads: default_heads(), folds: None }
    }
}

/// Tagging metrics over the validation clips mixed at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrMetrics {
    pub snr_db: f64,
    pub micro_precision: f64,
    pub macro_precision: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Completed {
        per_snr: Vec<SnrMetrics>,
        best_epoch: usize,
        epochs_run: usize,
        /// Validation reconstruction MSE after the last epoch.
        final_val_l2: f64,
        /// Decoder parameters and statistics equal their initial values.
        decoder_unchanged: bool,
        config_hash: String,
    },
    Failed {
        error: String,
    },
}

/// One `(head, alpha, fold)` training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub head: HeadKind,
    pub alpha: f64,
    pub fold: usize,
    pub seed: u64,
    pub outcome: CellOutcome,
}

/// Cross-fold means for one `(head, alpha)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub head: String,
    pub alpha: f64,
    pub folds_completed: usize,
    pub per_snr: Vec<SnrMetrics>,
    pub final_val_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub snr_levels: Vec<f64>,
    pub rows: Vec<AblationRow>,
    /// `(head, alpha, fold, error)` for every failed cell.
    pub failures: Vec<(String, f64, usize, String)>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl AblationReport {
    /// Aggregates cells in the order given; rows follow first appearance
    /// of each `(head, alpha)` pair.
    pub fn from_cells(cells: &[CellResult], snr_levels: &[f64]) -> Self {
        let mut keys: Vec<(HeadKind, f64)> = Vec::new();
        for c in cells {
            if !keys.iter().any(|(h, a)| *h == c.head && a.to_bits() == c.alpha.to_bits()) {
                keys.push((c.head.clone(), c.alpha));
            }
        }
        let mut failures = Vec::new();
        for c in cells {
            if let CellOutcome::Failed { error } = &c.outcome {
                failures.push((c.head.name().to_string(), c.alpha, c.fold, error.clone()));
            }
        }
        let rows = keys
            .into_iter()
            .map(|(head, alpha)| {
                let done: Vec<(&Vec<SnrMetrics>, f64)> = cells
                    .iter()
                    .filter(|c| c.head == head && c.alpha.to_bits() == alpha.to_bits())
                    .filter_map(|c| match &c.outcome {
                        CellOutcome::Completed { per_snr, final_val_l2, .. } => Some((per_snr, *final_val_l2)),
                        CellOutcome::Failed { .. } => None,
                    })
                    .collect();
                let per_snr = snr_levels
                    .iter()
                    .enumerate()
                    .map(|(j, &snr)| {
                        let at = || done.iter().filter_map(move |(m, _)| m.get(j));
                        SnrMetrics {
                            snr_db: snr,
                            micro_precision: mean(at().map(|m| m.micro_precision)).unwrap_or(0.0),
                            macro_precision: mean(at().map(|m| m.macro_precision)).unwrap_or(0.0),
                            auc: mean(at().filter_map(|m| m.auc)),
                        }
                    })
                    .collect();
                AblationRow {
                    head: head.name().to_string(),
                    alpha,
                    folds_completed: done.len(),
                    per_snr,
                    final_val_l2: mean(done.iter().map(|(_, l2)| *l2)),
                }
            })
            .collect();
        Self { snr_levels: snr_levels.to_vec(), rows, failures }
    }

    /// Markdown table: one row per `(head, alpha)`, three metric columns
    /// per SNR level.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| head | alpha |");
        let mut rule = String::from("|---|---|");
        for snr in &self.snr_levels {
            let _ = write!(out, " micro-P {snr} dB | macro-P {snr} dB | AUC {snr} dB |");
            rule.push_str("---|---|---|");
        }
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "| {} | {} |", row.head, row.alpha);
            for m in &row.per_snr {
                let auc = m.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into());
                let _ = write!(out, " {:.4} | {:.4} | {auc} |", m.micro_precision, m.macro_precision);
            }
            out.push('\n');
        }
        for (head, alpha, fold, err) in &self.failures {
            let _ = writeln!(out, "\nfailed: head {head}, alpha {alpha}, fold {fold}: {err}");
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["head".to_string(), "alpha".to_string()];
        for snr in &self.snr_levels {
            header.extend([format!("micro_p_{snr}db"), format!("macro_p_{snr}db"), format!("auc_{snr}db")]);
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.head.clone(), row.alpha.to_string()];
            for m in &row.per_snr {
                rec.push(m.micro_precision.to_string());
                rec.push(m.macro_precision.to_string());
                rec.push(m.auc.map(|a| a.to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Seed of every cell on `fold`. Cells that differ only in head or alpha
/// share an initialization, so their comparison isolates that choice.
pub fn cell_seed(master: u64, fold: usize) -> u64 {
    master.wrapping_add((fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn run_cell(
    features: &FeatureSet,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    alpha: f64,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&CellResult, Option<&EpochRecord>),
    cell: &CellResult,
) -> Result<CellOutcome> {
    let loss = LossConfig::new(alpha)?;
    let outcome = train_fold_with(features, model_cfg, train_cfg, &loss, |e| progress(cell, Some(e)))?;
    if let Some(dir) = out_dir {
        outcome.save(dir.join(format!("{}_alpha{}_fold{}", model_cfg.head.name(), alpha, train_cfg.fold)))?;
    }
    let ckpt = &outcome.checkpoint;
    let val: Vec<usize> = (0..features.len()).filter(|&i| features.folds[i] == train_cfg.fold).collect();
    let (probs, _) = predict(&ckpt.model, &ckpt.standardizer, features, &val, train_cfg.batch_size, false)?;
    let mut per_snr = Vec::new();
    let levels = snr_levels(features);
    for &snr in &levels {
        let rows: Vec<usize> = (0..val.len()).filter(|&r| features.snr_db[val[r]] == snr).collect();
        if rows.is_empty() {
            per_snr.push(SnrMetrics { snr_db: snr, micro_precision: 0.0, macro_precision: 0.0, auc: None });
            continue;
        }
        let idx: Vec<usize> = rows.iter().map(|&r| val[r]).collect();
        let batch = EvalBatch::new(probs.select(Axis(0), &rows), features.labels.select(Axis(0), &idx))?;
        let r = evaluate(&batch, train_cfg.threshold, &[])?;
        per_snr.push(SnrMetrics {
            snr_db: snr,
            micro_precision: r.micro_precision,
            macro_precision: r.macro_precision,
            auc: r.auc,
        });
    }
    let initial = ModelParams::init(model_cfg, train_cfg.seed)?;
    Ok(CellOutcome::Completed {
        per_snr,
        best_epoch: ckpt.epoch,
        epochs_run: outcome.history.epochs.len(),
        final_val_l2: outcome.history.last().map(|e| e.val_l2).unwrap_or(f64::NAN),
        decoder_unchanged: initial.decoder == ckpt.model.decoder,
        config_hash: ckpt.config_hash.clone(),
    })
}

/// Distinct SNR levels of the corpus, ascending.
pub fn snr_levels(features: &FeatureSet) -> Vec<f64> {
    let mut levels = features.snr_db.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
}

/// Trains every `(head, alpha, fold)` cell. A failing cell is recorded in
/// the report and does not stop the sweep. With `out_dir`, each cell's run
/// plus `cells.json`, `report.json`, `table.md` and `table.csv` are written.
pub fn run_ablation(
    features: &FeatureSet,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    cfg: &AblationConfig,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&CellResult, Option<&EpochRecord>),
) -> Result<(AblationReport, Vec<CellResult>)> {
    if cfg.alphas.is_empty() || cfg.heads.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one alpha and one head".into()));
    }
    for &a in &cfg.alphas {
        LossConfig::new(a)?;
    }
    let folds = cfg.folds.clone().unwrap_or_else(|| (0..features.n_folds).collect());
    if folds.is_empty() || folds.iter().any(|&f| f >= features.n_folds) {
        return Err(Error::InvalidConfig(format!(
            "ablation folds {folds:?} must be a non-empty subset of 0..{}",
            features.n_folds
        )));
    }
    let mut cells = Vec::new();
    for head in &cfg.heads {
        let mcfg = model_cfg.clone().with_head(head.clone());
        mcfg.validate()?;
        for &alpha in &cfg.alphas {
            for &fold in &folds {
                let seed = cell_seed(train_cfg.seed, fold);
                let tcfg = TrainConfig { fold, seed, ..train_cfg.clone() };
                let mut cell = CellResult {
                    head: head.clone(),
                    alpha,
                    fold,
                    seed,
                    outcome: CellOutcome::Failed { error: String::new() },
                };
                cell.outcome = match run_cell(features, &mcfg, &tcfg, alpha, out_dir, &mut progress, &cell) {
                    Ok(o) => o,
                    Err(e) => CellOutcome::Failed { error: e.to_string() },
                };
                progress(&cell, None);
                cells.push(cell);
            }
        }
    }
    let report = AblationReport::from_cells(&cells, &snr_levels(features));
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("cells.json"), serde_json::to_string_pretty(&cells)?)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        std::fs::write(dir.join("table.md"), report.to_markdown())?;
        report.save_csv(dir.join("table.csv"))?;
    }
    Ok((report, cells))
}
