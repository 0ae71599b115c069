//! Single-step attention over the whole `T x F` plane.
//!
//! At every location `(t, f)` the class vector `Z[:, t, f]` is mapped by two
//! affine maps along the class axis, giving attention logits `a` and
//! classification logits `c`. Per class, the logits are softmax-normalized
//! jointly over all `T * F` locations and used to average `sigmoid(c)`.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, sigmoid_slope, softmax_rows, softmax_rows_backward, squash, ClipPrediction,
    Linear,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleAttentionParams {
    pub attention: Linear,
    pub classify: Linear,
}

impl SingleAttentionParams {
    pub fn init<R: Rng + ?Sized>(n_classes: usize, rng: &mut R) -> Self {
        Self {
            attention: Linear::init(n_classes, n_classes, rng),
            classify: Linear::init(n_classes, n_classes, rng),
        }
    }

    pub fn zeros(n_classes: usize) -> Self {
        Self {
            attention: Linear::zeros(n_classes, n_classes),
            classify: Linear::zeros(n_classes, n_classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.attention.out_dim())
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        [&self.attention, &self.classify].into_iter().flat_map(Linear::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        [&mut self.attention, &mut self.classify]
            .into_iter()
            .flat_map(Linear::tensors_mut)
            .collect()
    }
}

struct Trace {
    /// `K x (T*F)` flattened mask.
    flat: Array2<f64>,
    weights: Array2<f64>,
    classify: Array2<f64>,
    output: Array1<f64>,
}

fn forward(z: ArrayView3<f64>, params: &SingleAttentionParams) -> Result<Trace> {
    let (k, t, f) = z.dim();
    if k == 0 || t == 0 || f == 0 {
        return Err(Error::InvalidArgument(format!("empty class mask {:?}", z.dim())));
    }
    params.attention.check(k, k, "attention map")?;
    params.classify.check(k, k, "classification map")?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("class mask contains non-finite values".into()));
    }
    let flat = z
        .to_owned()
        .into_shape_with_order((k, t * f))
        .expect("contiguous reshape");
    let mut weights = params.attention.apply_cols(flat.view());
    softmax_rows(weights.view_mut());
    let classify = params.classify.apply_cols(flat.view()).mapv_into(squash);
    let output = (&classify * &weights).sum_axis(Axis(1));
    Ok(Trace {
        flat,
        weights,
        classify,
        output,
    })
}

pub fn single_step_attention(
    z: ArrayView3<f64>,
    params: &SingleAttentionParams,
) -> Result<ClipPrediction> {
    Ok(ClipPrediction {
        probs: forward(z, params)?.output,
    })
}

pub fn single_step_attention_backward(
    z: ArrayView3<f64>,
    params: &SingleAttentionParams,
    d_probs: ArrayView1<f64>,
) -> Result<(Array3<f64>, SingleAttentionParams)> {
    let trace = forward(z, params)?;
    if d_probs.len() != trace.output.len() {
        return Err(Error::InvalidArgument(format!(
            "gradient has {} entries for {} classes",
            d_probs.len(),
            trace.output.len()
        )));
    }
    check_finite(d_probs, "upstream gradient")?;
    let mut grads = params.zeros_like();
    let dp = d_probs.insert_axis(Axis(1));
    let dc = &trace.weights * &dp;
    let dw = &trace.classify * &dp;
    let da = softmax_rows_backward(trace.weights.view(), dw.view());
    let dc_pre = dc * &trace.classify.mapv(sigmoid_slope);
    let d_flat = params.attention.backward_cols(trace.flat.view(), da.view(), &mut grads.attention)
        + params
            .classify
            .backward_cols(trace.flat.view(), dc_pre.view(), &mut grads.classify);
    let dz = d_flat.into_shape_with_order(z.raw_dim()).expect("same element count");
    Ok((dz, grads))
}
