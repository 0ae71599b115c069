use ndarray::{Array, ArrayView, ArrayView2, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to this distance from 0 and 1 inside the
/// cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

/// Auxiliary-task weights swept by the ablation.
pub const ALPHA_PRESETS: [f64; 3] = [0.0, 0.001, 0.01];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the reconstruction loss.
    pub alpha: f64,
}

impl LossConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        let cfg = Self { alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_finite() && self.alpha >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("alpha must be finite and non-negative, got {}", self.alpha)))
        }
    }

    /// Whether the decoder takes part in training.
    pub fn uses_decoder(&self) -> bool {
        self.alpha > 0.0
    }
}

fn same_shape<D: Dimension>(a: &ArrayView<f64, D>, b: &ArrayView<f64, D>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidArgument(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument(format!("{what}: empty input")));
    }
    Ok(())
}

/// Binary cross-entropy averaged over batch and classes.
pub fn bce_loss(probs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
    same_shape(&probs, &targets, "bce_loss")?;
    let n = probs.len() as f64;
    let sum: f64 = probs
        .iter()
        .zip(targets.iter())
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / n)
}

/// Gradient of [`bce_loss`] with respect to the probabilities; zero where
/// the clamp is active.
pub fn bce_grad(probs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<ndarray::Array2<f64>> {
    same_shape(&probs, &targets, "bce_grad")?;
    let n = probs.len() as f64;
    let mut g = probs.to_owned();
    ndarray::Zip::from(&mut g).and(&targets).for_each(|g, &y| {
        let p = *g;
        *g = if p < BCE_CLAMP || p > 1.0 - BCE_CLAMP {
            0.0
        } else {
            (-(y / p) + (1.0 - y) / (1.0 - p)) / n
        };
    });
    Ok(g)
}

/// Mean squared difference.
pub fn mse_loss<D: Dimension>(a: ArrayView<f64, D>, b: ArrayView<f64, D>) -> Result<f64> {
    same_shape(&a, &b, "mse_loss")?;
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to its first argument.
pub fn mse_grad<D: Dimension>(a: ArrayView<f64, D>, b: ArrayView<f64, D>) -> Result<Array<f64, D>> {
    same_shape(&a, &b, "mse_grad")?;
    let scale = 2.0 / a.len() as f64;
    Ok((&a - &b) * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtlLoss {
    pub total: f64,
    pub classification: f64,
    /// Absent when no reconstruction was supplied.
    pub reconstruction: Option<f64>,
}

/// `L1 + alpha * L2`. With `alpha = 0` the reconstruction may be omitted.
pub fn mtl_loss<D: Dimension>(
    probs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    reconstruction: Option<(ArrayView<f64, D>, ArrayView<f64, D>)>,
    cfg: &LossConfig,
) -> Result<MtlLoss> {
    cfg.validate()?;
    let l1 = bce_loss(probs, targets)?;
    let l2 = reconstruction.map(|(x_bar, x_hat)| mse_loss(x_bar, x_hat)).transpose()?;
    let total = match l2 {
        Some(l2) if cfg.alpha > 0.0 => l1 + cfg.alpha * l2,
        None if cfg.alpha > 0.0 => {
            return Err(Error::InvalidArgument("alpha > 0 needs a reconstruction".into()))
        }
        _ => l1,
    };
    Ok(MtlLoss { total, classification: l1, reconstruction: l2 })
}
