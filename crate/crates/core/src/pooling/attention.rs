//! Two-step attention pooling.
//!
//! Step one attends over frequency. For every class `k` and frame `t` the
//! mel vector `Z[k, t, :]` goes through two affine maps along the
//! frequency axis: an attention branch (sigmoid, then softmax over `F`) and
//! a classification branch (sigmoid). Their weighted sum over `F` gives
//! `Z_p1[k, t]`.
//!
//! Step two attends over time. At every frame the class vector
//! `Z_p1[:, t]` goes through two affine maps along the class axis; the
//! attention branch is squashed and softmax-normalized over `T` per class,
//! the classification branch is squashed, and their weighted sum over `T`
//! is the clip probability `Z_p2[k]`.
//!
//! Both classification branches are squashed, so `Z_p1` and `Z_p2` are
//! convex combinations of values in `(0, 1)` and stay there.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, sigmoid, sigmoid_slope, softmax_rows, softmax_rows_backward, squash,
    ClipPrediction, Linear,
};
use crate::error::{Error, Result};

/// Parameters of both attention steps.
///
/// The frequency-axis maps are shared by all classes when
/// `step1_attention` and `step1_classify` hold a single map, or per class
/// when they hold `K` maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub step1_attention: Vec<Linear>,
    pub step1_classify: Vec<Linear>,
    pub step2_attention: Linear,
    pub step2_classify: Linear,
}

/// Every intermediate product of a two-step forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMaps {
    /// Normalized frequency attention, `K x T x F`; sums to 1 over `F`.
    pub step1_weights: Array3<f64>,
    /// First-step output, `K x T`.
    pub step1_output: Array2<f64>,
    /// Normalized time attention, `K x T`; sums to 1 over `T`.
    pub step2_weights: Array2<f64>,
    /// Clip probabilities, length `K`.
    pub step2_output: Array1<f64>,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(
        n_classes: usize,
        n_mels: usize,
        per_class_step1: bool,
        rng: &mut R,
    ) -> Self {
        let groups = if per_class_step1 { n_classes } else { 1 };
        let step1_attention = (0..groups).map(|_| Linear::init(n_mels, n_mels, rng)).collect();
        let step1_classify = (0..groups).map(|_| Linear::init(n_mels, n_mels, rng)).collect();
        Self {
            step1_attention,
            step1_classify,
            step2_attention: Linear::init(n_classes, n_classes, rng),
            step2_classify: Linear::init(n_classes, n_classes, rng),
        }
    }

    pub fn zeros(n_classes: usize, n_mels: usize, per_class_step1: bool) -> Self {
        let groups = if per_class_step1 { n_classes } else { 1 };
        Self {
            step1_attention: vec![Linear::zeros(n_mels, n_mels); groups],
            step1_classify: vec![Linear::zeros(n_mels, n_mels); groups],
            step2_attention: Linear::zeros(n_classes, n_classes),
            step2_classify: Linear::zeros(n_classes, n_classes),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.step2_attention.out_dim()
    }

    pub fn n_mels(&self) -> usize {
        self.step1_attention.first().map_or(0, Linear::in_dim)
    }

    pub fn per_class_step1(&self) -> bool {
        self.step1_attention.len() > 1
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_classes(), self.n_mels(), self.per_class_step1())
    }

    fn group(&self, k: usize) -> usize {
        if self.step1_attention.len() == 1 {
            0
        } else {
            k
        }
    }

    fn check_step1(&self, n_classes: usize, n_mels: usize) -> Result<()> {
        let groups = self.step1_attention.len();
        if groups == 0 || self.step1_classify.len() != groups || (groups != 1 && groups != n_classes)
        {
            return Err(Error::InvalidArgument(format!(
                "step-one maps must be shared (1) or per class ({n_classes}), found {groups}/{}",
                self.step1_classify.len()
            )));
        }
        for (a, c) in self.step1_attention.iter().zip(&self.step1_classify) {
            a.check(n_mels, n_mels, "step-one attention")?;
            c.check(n_mels, n_mels, "step-one classification")?;
        }
        Ok(())
    }

    fn check_step2(&self, n_classes: usize) -> Result<()> {
        self.step2_attention.check(n_classes, n_classes, "step-two attention")?;
        self.step2_classify.check(n_classes, n_classes, "step-two classification")
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.step1_attention
            .iter()
            .chain(&self.step1_classify)
            .chain([&self.step2_attention, &self.step2_classify])
            .flat_map(Linear::tensors)
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.step1_attention
            .iter_mut()
            .chain(self.step1_classify.iter_mut())
            .chain([&mut self.step2_attention, &mut self.step2_classify])
            .flat_map(Linear::tensors_mut)
            .collect()
    }
}

struct Step1Trace {
    /// Sigmoid attention scores per class, `T x F`.
    scores: Vec<Array2<f64>>,
    weights: Array3<f64>,
    classify: Vec<Array2<f64>>,
    output: Array2<f64>,
}

fn step1_forward(z: ArrayView3<f64>, params: &AttentionParams) -> Result<Step1Trace> {
    let (n_classes, n_frames, n_mels) = z.dim();
    if n_classes == 0 || n_frames == 0 || n_mels == 0 {
        return Err(Error::InvalidArgument(format!("empty class mask {:?}", z.dim())));
    }
    params.check_step1(n_classes, n_mels)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("class mask contains non-finite values".into()));
    }
    let mut scores = Vec::with_capacity(n_classes);
    let mut classify = Vec::with_capacity(n_classes);
    let mut weights = Array3::zeros((n_classes, n_frames, n_mels));
    let mut output = Array2::zeros((n_classes, n_frames));
    for k in 0..n_classes {
        let g = params.group(k);
        let zk = z.index_axis(Axis(0), k);
        let score = params.step1_attention[g].apply_rows(zk).mapv_into(sigmoid);
        let mut w = score.clone();
        softmax_rows(w.view_mut());
        let c = params.step1_classify[g].apply_rows(zk).mapv_into(squash);
        output.row_mut(k).assign(&(&c * &w).sum_axis(Axis(1)));
        weights.index_axis_mut(Axis(0), k).assign(&w);
        scores.push(score);
        classify.push(c);
    }
    Ok(Step1Trace {
        scores,
        weights,
        classify,
        output,
    })
}

/// First step: attention over frequency. Returns `(Z_p1, Ẑ_a1)` shaped
/// `K x T` and `K x T x F`.
pub fn attention_step1(
    z: ArrayView3<f64>,
    params: &AttentionParams,
) -> Result<(Array2<f64>, Array3<f64>)> {
    let trace = step1_forward(z, params)?;
    Ok((trace.output, trace.weights))
}

/// Gradient of the first step. Only the step-one entries of the returned
/// parameter gradient are populated.
pub fn attention_step1_backward(
    z: ArrayView3<f64>,
    params: &AttentionParams,
    d_output: ArrayView2<f64>,
) -> Result<(Array3<f64>, AttentionParams)> {
    let trace = step1_forward(z, params)?;
    if d_output.dim() != trace.output.dim() {
        return Err(Error::InvalidArgument(format!(
            "step-one gradient shape {:?} does not match output {:?}",
            d_output.dim(),
            trace.output.dim()
        )));
    }
    let mut grads = params.zeros_like();
    let mut dz = Array3::zeros(z.raw_dim());
    for k in 0..z.len_of(Axis(0)) {
        let g = params.group(k);
        let zk = z.index_axis(Axis(0), k);
        let w = trace.weights.index_axis(Axis(0), k);
        let c = &trace.classify[k];
        let dp = d_output.row(k).insert_axis(Axis(1));
        let dc = &w * &dp;
        let dw = c * &dp;
        let dscore = softmax_rows_backward(w, dw.view());
        let da = dscore * &trace.scores[k].mapv(sigmoid_slope);
        let dc_pre = dc * &c.mapv(sigmoid_slope);
        let dz_att = params.step1_attention[g].backward_rows(zk, da.view(), &mut grads.step1_attention[g]);
        let dz_cls = params.step1_classify[g].backward_rows(zk, dc_pre.view(), &mut grads.step1_classify[g]);
        dz.index_axis_mut(Axis(0), k).assign(&(dz_att + dz_cls));
    }
    Ok((dz, grads))
}

struct Step2Trace {
    scores: Array2<f64>,
    weights: Array2<f64>,
    classify: Array2<f64>,
    output: Array1<f64>,
}

fn step2_forward(p1: ArrayView2<f64>, params: &AttentionParams) -> Result<Step2Trace> {
    let (n_classes, n_frames) = p1.dim();
    if n_classes == 0 || n_frames == 0 {
        return Err(Error::InvalidArgument(format!("empty step-one output {:?}", p1.dim())));
    }
    params.check_step2(n_classes)?;
    if p1.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("step-one output contains non-finite values".into()));
    }
    let scores = params.step2_attention.apply_cols(p1).mapv_into(sigmoid);
    let mut weights = scores.clone();
    softmax_rows(weights.view_mut());
    let classify = params.step2_classify.apply_cols(p1).mapv_into(squash);
    let output = (&classify * &weights).sum_axis(Axis(1));
    Ok(Step2Trace {
        scores,
        weights,
        classify,
        output,
    })
}

/// Second step: attention over time. Returns `(Z_p2, Ẑ_a2)`.
pub fn attention_step2(
    p1: ArrayView2<f64>,
    params: &AttentionParams,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let trace = step2_forward(p1, params)?;
    Ok((trace.output, trace.weights))
}

/// Gradient of the second step with respect to its input and the
/// step-two parameters.
pub fn attention_step2_backward(
    p1: ArrayView2<f64>,
    params: &AttentionParams,
    d_output: ArrayView1<f64>,
) -> Result<(Array2<f64>, AttentionParams)> {
    let trace = step2_forward(p1, params)?;
    if d_output.len() != trace.output.len() {
        return Err(Error::InvalidArgument(format!(
            "step-two gradient has {} entries for {} classes",
            d_output.len(),
            trace.output.len()
        )));
    }
    check_finite(d_output, "upstream gradient")?;
    let mut grads = params.zeros_like();
    let dp = d_output.insert_axis(Axis(1));
    let dc = &trace.weights * &dp;
    let dw = &trace.classify * &dp;
    let dscore = softmax_rows_backward(trace.weights.view(), dw.view());
    let da = dscore * &trace.scores.mapv(sigmoid_slope);
    let dc_pre = dc * &trace.classify.mapv(sigmoid_slope);
    let d_att = params
        .step2_attention
        .backward_cols(p1, da.view(), &mut grads.step2_attention);
    let d_cls = params
        .step2_classify
        .backward_cols(p1, dc_pre.view(), &mut grads.step2_classify);
    Ok((d_att + d_cls, grads))
}

/// Both steps, returning the clip prediction and every intermediate map.
pub fn two_step_attention(
    z: ArrayView3<f64>,
    params: &AttentionParams,
) -> Result<(ClipPrediction, AttentionMaps)> {
    let step1 = step1_forward(z, params)?;
    let step2 = step2_forward(step1.output.view(), params)?;
    let maps = AttentionMaps {
        step1_weights: step1.weights,
        step1_output: step1.output,
        step2_weights: step2.weights,
        step2_output: step2.output.clone(),
    };
    Ok((ClipPrediction { probs: step2.output }, maps))
}

/// Gradient of [`two_step_attention`] with respect to `Z` and all
/// attention parameters.
pub fn two_step_attention_backward(
    z: ArrayView3<f64>,
    params: &AttentionParams,
    d_probs: ArrayView1<f64>,
) -> Result<(Array3<f64>, AttentionParams)> {
    let step1 = step1_forward(z, params)?;
    let (d_p1, grads2) = attention_step2_backward(step1.output.view(), params, d_probs)?;
    let (dz, mut grads) = attention_step1_backward(z, params, d_p1.view())?;
    grads.step2_attention = grads2.step2_attention;
    grads.step2_classify = grads2.step2_classify;
    Ok((dz, grads))
}
