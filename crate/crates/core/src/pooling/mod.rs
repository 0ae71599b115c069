//! Multiple-instance pooling heads: map a per-class time-frequency mask
//! `Z` (`K x T x F`) to clip-level presence probabilities.
//!
//! Every head ends in a logistic squash so its output can feed binary
//! cross-entropy directly. Each forward function has a matching
//! `*_backward` that returns the gradient with respect to `Z` (and the
//! head's parameters, where it has any) given the gradient of the loss
//! with respect to the output probabilities.

mod attention;
mod global;
mod single;

pub use attention::{
    attention_step1, attention_step1_backward, attention_step2, attention_step2_backward,
    two_step_attention, two_step_attention_backward, AttentionMaps, AttentionParams,
};
pub use global::{
    global_avg_pool, global_avg_pool_backward, global_avg_values, global_max_pool,
    global_max_pool_backward, global_max_values, gwrp, gwrp_backward, gwrp_values, GwrpDecay,
};
pub use single::{single_step_attention, single_step_attention_backward, SingleAttentionParams};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K x T x F` per-class time-frequency mask.
pub type ClassTFMask = ndarray::Array3<f64>;

/// Squashed outputs never reach exactly 0 or 1, even for saturated logits.
pub const SQUASH_EPS: f64 = 1e-12;

/// Clip-level presence probabilities, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub probs: Array1<f64>,
}

impl ClipPrediction {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Class indices ordered by descending probability, ties by index.
    pub fn ranked_classes(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx
    }
}

/// Logistic function without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid clamped to `[SQUASH_EPS, 1 - SQUASH_EPS]`.
pub fn squash(x: f64) -> f64 {
    sigmoid(x).clamp(SQUASH_EPS, 1.0 - SQUASH_EPS)
}

/// Derivative of the logistic function expressed through its output.
#[inline]
pub(crate) fn sigmoid_slope(s: f64) -> f64 {
    s * (1.0 - s)
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(mut x: ArrayViewMut2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
}

/// Backward of a row-wise softmax: given weights `w` and upstream `dw`,
/// returns the gradient with respect to the softmax inputs.
pub(crate) fn softmax_rows_backward(w: ArrayView2<f64>, dw: ArrayView2<f64>) -> Array2<f64> {
    let dot = (&w * &dw).sum_axis(Axis(1)).insert_axis(Axis(1));
    &w * &(&dw - &dot)
}

/// Dense affine map `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    /// Uniform in `±1/sqrt(in_dim)`, zero bias.
    pub fn init<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((out_dim, in_dim), || {
                rng.random_range(-bound..=bound)
            }),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Applies the map to every row of `x` (`n x in` to `n x out`).
    pub fn apply_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Applies the map to every column of `x` (`in x n` to `out x n`).
    pub fn apply_cols(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.weight.dot(&x) + &self.bias.view().insert_axis(Axis(1))
    }

    pub(crate) fn check(&self, out_dim: usize, in_dim: usize, what: &str) -> Result<()> {
        if self.weight.dim() != (out_dim, in_dim) || self.bias.len() != out_dim {
            return Err(Error::InvalidArgument(format!(
                "{what}: expected a {out_dim}x{in_dim} map, found weight {:?} bias {}",
                self.weight.dim(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Accumulates the parameter gradient of `y = x W^T + b` (rows form)
    /// and returns the gradient with respect to `x`.
    pub(crate) fn backward_rows(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut Linear,
    ) -> Array2<f64> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    /// Column form of [`Linear::backward_rows`].
    pub(crate) fn backward_cols(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut Linear,
    ) -> Array2<f64> {
        grad.weight += &dy.dot(&x.t());
        grad.bias += &dy.sum_axis(Axis(1));
        self.weight.t().dot(&dy)
    }
}

/// Which pooling head maps the class mask to clip probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum HeadKind {
    #[serde(rename = "gmp")]
    GlobalMax,
    #[serde(rename = "gap")]
    GlobalAverage,
    #[serde(rename = "gwrp")]
    WeightedRank(GwrpDecay),
    #[serde(rename = "attention")]
    SingleAttention,
    #[serde(rename = "2ap")]
    TwoStepAttention,
}

impl HeadKind {
    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::GlobalMax => "gmp",
            HeadKind::GlobalAverage => "gap",
            HeadKind::WeightedRank(_) => "gwrp",
            HeadKind::SingleAttention => "attention",
            HeadKind::TwoStepAttention => "2ap",
        }
    }

    pub fn is_attention(&self) -> bool {
        matches!(self, HeadKind::SingleAttention | HeadKind::TwoStepAttention)
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmp" => Ok(HeadKind::GlobalMax),
            "gap" => Ok(HeadKind::GlobalAverage),
            "gwrp" => Ok(HeadKind::WeightedRank(GwrpDecay::default())),
            "attention" => Ok(HeadKind::SingleAttention),
            "2ap" => Ok(HeadKind::TwoStepAttention),
            other => Err(Error::InvalidConfig(format!(
                "unknown pooling head {other:?}; expected one of gmp, gap, gwrp, attention, 2ap"
            ))),
        }
    }
}

pub(crate) fn check_finite(values: ArrayView1<f64>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite values")))
    }
}
