//! Clip-level tagging metrics: ROC AUC, micro and macro precision.

use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores and binary labels for `N` clips over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBatch {
    scores: Array2<f64>,
    labels: Array2<u8>,
}

impl EvalBatch {
    pub fn new(scores: Array2<f64>, labels: Array2<u8>) -> Result<Self> {
        if scores.dim() != labels.dim() {
            return Err(Error::InvalidArgument(format!(
                "scores {:?} and labels {:?} differ in shape",
                scores.dim(),
                labels.dim()
            )));
        }
        if scores.iter().any(|s| !s.is_finite() || !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidInput("scores must be finite and within [0, 1]".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.scores.ncols()
    }
}

/// A ratio that may have had an empty denominator, in which case its value
/// is 0 and `undefined` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
}

impl Ratio {
    fn of(num: usize, den: usize) -> Self {
        if den == 0 {
            Ratio { value: 0.0, undefined: true }
        } else {
            Ratio { value: num as f64 / den as f64, undefined: false }
        }
    }
}

/// Mann-Whitney estimate of the ROC AUC: the fraction of (positive,
/// negative) pairs ranked correctly, ties counting one half.
pub fn roc_auc(scores: ArrayView1<f64>, labels: ArrayView1<u8>) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos = order[i..=j].iter().filter(|&&o| labels[o] == 1).count();
        rank_sum += midrank * pos as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold must lie in (0, 1), got {threshold}")))
    }
}

/// Per-class `(TP, FP)` with prediction `score >= threshold`.
fn counts(batch: &EvalBatch, threshold: f64) -> Vec<(usize, usize)> {
    batch
        .scores
        .axis_iter(Axis(1))
        .zip(batch.labels.axis_iter(Axis(1)))
        .map(|(s, l)| {
            s.iter().zip(l).fold((0, 0), |(tp, fp), (&s, &l)| match (s >= threshold, l) {
                (true, 1) => (tp + 1, fp),
                (true, _) => (tp, fp + 1),
                _ => (tp, fp),
            })
        })
        .collect()
}

/// TP / (TP + FP) pooled over every clip-class cell.
pub fn micro_precision(batch: &EvalBatch, threshold: f64) -> Result<Ratio> {
    check_threshold(threshold)?;
    let (tp, fp) = counts(batch, threshold)
        .into_iter()
        .fold((0, 0), |(a, b), (tp, fp)| (a + tp, b + fp));
    Ok(Ratio::of(tp, tp + fp))
}

/// Unweighted mean of per-class precisions; returns the mean and the
/// per-class ratios.
pub fn macro_precision(batch: &EvalBatch, threshold: f64) -> Result<(f64, Vec<Ratio>)> {
    check_threshold(threshold)?;
    let per_class: Vec<Ratio> = counts(batch, threshold)
        .into_iter()
        .map(|(tp, fp)| Ratio::of(tp, tp + fp))
        .collect();
    let mean = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|r| r.value).sum::<f64>() / per_class.len() as f64
    };
    Ok((mean, per_class))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class_index: usize,
    pub name: String,
    pub n_positive: usize,
    pub precision: f64,
    /// Absent when the class had no positives or no negatives.
    pub auc: Option<f64>,
}

/// Report keys: `micro_precision`, `macro_precision`, `auc` (macro mean
/// over evaluable classes, absent if none), `threshold`, `n_clips`,
/// `per_class` rows and `flags` describing any degenerate quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_precision: f64,
    pub macro_precision: f64,
    pub auc: Option<f64>,
    pub threshold: f64,
    pub n_clips: usize,
    pub per_class: Vec<ClassRow>,
    pub flags: Vec<String>,
}

impl MetricsReport {
    pub fn per_class_precision(&self) -> Vec<f64> {
        self.per_class.iter().map(|r| r.precision).collect()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// One row per class: `class,index,n_positive,precision,auc`.
    pub fn save_per_class_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["class", "index", "n_positive", "precision", "auc"])?;
        for row in &self.per_class {
            w.write_record([
                row.name.clone(),
                row.class_index.to_string(),
                row.n_positive.to_string(),
                format!("{:.6}", row.precision),
                row.auc.map(|a| format!("{a:.6}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// All metrics for a batch. `class_names` may be empty, in which case
/// classes are named by index.
pub fn evaluate(batch: &EvalBatch, threshold: f64, class_names: &[String]) -> Result<MetricsReport> {
    let micro = micro_precision(batch, threshold)?;
    let (macro_p, per_class) = macro_precision(batch, threshold)?;
    let mut flags = Vec::new();
    if micro.undefined {
        flags.push("micro_precision: no positive predictions".to_string());
    }
    let mut rows = Vec::with_capacity(batch.n_classes());
    let mut aucs = Vec::new();
    for k in 0..batch.n_classes() {
        let name = class_names.get(k).cloned().unwrap_or_else(|| format!("class{k}"));
        if per_class[k].undefined {
            flags.push(format!("precision[{name}]: no positive predictions"));
        }
        let labels = batch.labels.column(k);
        let auc = match roc_auc(batch.scores.column(k), labels) {
            Ok(a) => {
                aucs.push(a);
                Some(a)
            }
            Err(Error::UndefinedMetric(why)) => {
                flags.push(format!("auc[{name}]: {why}"));
                None
            }
            Err(e) => return Err(e),
        };
        rows.push(ClassRow {
            class_index: k,
            name,
            n_positive: labels.iter().filter(|&&l| l == 1).count(),
            precision: per_class[k].value,
            auc,
        });
    }
    let auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    Ok(MetricsReport {
        micro_precision: micro.value,
        macro_precision: macro_p,
        auc,
        threshold,
        n_clips: batch.scores.nrows(),
        per_class: rows,
        flags,
    })
}
