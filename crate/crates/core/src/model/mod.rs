//! The multi-task network: a shared convolutional encoder producing a
//! per-class time-frequency mask, a pooling head turning the mask into clip
//! probabilities, and a decoder reconstructing the input log-mel from the
//! encoder's last block.
//!
//! Inputs are batches of standardized log-mel spectrograms, `N x T x F`.

mod checkpoint;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Layer, PoolKind, Sequential, Trace};
use crate::pooling::{
    global_avg_pool, global_avg_pool_backward, global_max_pool, global_max_pool_backward, gwrp,
    gwrp_backward, single_step_attention, single_step_attention_backward, two_step_attention,
    two_step_attention_backward, AttentionMaps, AttentionParams, HeadKind, SingleAttentionParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub channel_widths: Vec<usize>,
    /// Widths of the mirrored decoder blocks before the single-channel
    /// block. Defaults to the encoder widths reversed, minus the last one.
    #[serde(default)]
    pub decoder_widths: Option<Vec<usize>>,
    pub n_classes: usize,
    pub n_mels: usize,
    #[serde(default = "default_kernel")]
    pub conv_kernel: usize,
    #[serde(default)]
    pub block_pool: PoolKind,
    #[serde(default = "default_head")]
    pub head: HeadKind,
    /// Separate frequency maps per class in the first attention step.
    #[serde(default)]
    pub per_class_step1: bool,
    /// Linear 1x1 convolution after the decoder's last ReLU, so the
    /// reconstruction can go negative.
    #[serde(default = "default_true")]
    pub output_projection: bool,
    #[serde(default = "default_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
}

fn default_kernel() -> usize {
    3
}
fn default_head() -> HeadKind {
    HeadKind::TwoStepAttention
}
fn default_true() -> bool {
    true
}
fn default_eps() -> f64 {
    1e-5
}
fn default_momentum() -> f64 {
    0.1
}

impl ModelConfig {
    /// Full-size network: 41 classes, 64 mel bins, widths 32..256.
    pub fn full() -> Self {
        Self {
            channel_widths: vec![32, 64, 128, 256],
            decoder_widths: None,
            n_classes: 41,
            n_mels: 64,
            conv_kernel: 3,
            block_pool: PoolKind::Avg,
            head: HeadKind::TwoStepAttention,
            per_class_step1: false,
            output_projection: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Desk-scale network: widths [8, 16, 32] over 32 mel bins.
    pub fn desk(n_classes: usize) -> Self {
        Self {
            channel_widths: vec![8, 16, 32],
            n_classes,
            n_mels: 32,
            ..Self::full()
        }
    }

    pub fn with_head(mut self, head: HeadKind) -> Self {
        self.head = head;
        self
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        self.decoder_widths.clone().unwrap_or_else(|| {
            let n = self.channel_widths.len();
            self.channel_widths[..n.saturating_sub(1)].iter().rev().copied().collect()
        })
    }

    pub fn shared_channels(&self) -> usize {
        self.channel_widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.channel_widths.is_empty() || self.channel_widths.contains(&0) {
            return bad("channel widths must be non-empty and positive".into());
        }
        if self.channel_widths.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("channel widths must increase, got {:?}", self.channel_widths));
        }
        if self.decoder_widths().contains(&0) {
            return bad("decoder widths must be positive".into());
        }
        if self.n_classes == 0 || self.n_mels == 0 {
            return bad("n_classes and n_mels must be positive".into());
        }
        if self.conv_kernel % 2 == 0 {
            return bad(format!("convolution kernel must be odd, got {}", self.conv_kernel));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("batch-norm eps must be positive and momentum in [0, 1]".into());
        }
        if let HeadKind::WeightedRank(decay) = &self.head {
            decay.validate(self.n_classes).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }
}

/// Parameters of whichever pooling head the config selects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadParams {
    None,
    SingleStep(SingleAttentionParams),
    TwoStep(AttentionParams),
}

impl HeadParams {
    fn zeros_like(&self) -> Self {
        match self {
            HeadParams::None => HeadParams::None,
            HeadParams::SingleStep(p) => HeadParams::SingleStep(p.zeros_like()),
            HeadParams::TwoStep(p) => HeadParams::TwoStep(p.zeros_like()),
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            HeadParams::None => Vec::new(),
            HeadParams::SingleStep(p) => p.tensors(),
            HeadParams::TwoStep(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            HeadParams::None => Vec::new(),
            HeadParams::SingleStep(p) => p.tensors_mut(),
            HeadParams::TwoStep(p) => p.tensors_mut(),
        }
    }
}

/// Which part of the network a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    ClassConv,
    Head,
    Decoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: Sequential,
    pub class_conv: Conv2d,
    pub head: HeadParams,
    pub decoder: Sequential,
}

/// Everything a forward pass produces for a batch.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    /// `N x C x T x F`, the last encoder block.
    pub shared_rep: Array4<f64>,
    /// `N x K x T x F`, the class mask `Z`.
    pub class_mask: Array4<f64>,
    /// `N x K` clip probabilities.
    pub predictions: Array2<f64>,
    /// One entry per clip for the two-step head, empty otherwise.
    pub attention: Vec<AttentionMaps>,
    /// `N x T x F`, present only when requested.
    pub reconstruction: Option<Array3<f64>>,
}

/// Activations kept by [`ModelParams::forward_train`].
#[derive(Debug, Clone)]
pub struct ModelTrace {
    encoder: Trace,
    decoder: Option<Trace>,
    shared_rep: Array4<f64>,
    class_mask: Array4<f64>,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.conv_kernel;
        let mut layers = Vec::new();
        let mut cin = 1;
        for &w in &config.channel_widths {
            layers.extend(Sequential::conv_block(cin, w, k, Some(config.block_pool), config.bn_eps, &mut rng));
            cin = w;
        }
        let encoder = Sequential::new(layers);
        let class_conv = Conv2d::init(cin, config.n_classes, 1, true, &mut rng);
        let head = match config.head {
            HeadKind::TwoStepAttention => HeadParams::TwoStep(AttentionParams::init(
                config.n_classes,
                config.n_mels,
                config.per_class_step1,
                &mut rng,
            )),
            HeadKind::SingleAttention => {
                HeadParams::SingleStep(SingleAttentionParams::init(config.n_classes, &mut rng))
            }
            _ => HeadParams::None,
        };
        let mut layers = Vec::new();
        let mut din = cin;
        for &w in &config.decoder_widths() {
            layers.extend(Sequential::conv_block(din, w, k, Some(config.block_pool), config.bn_eps, &mut rng));
            din = w;
        }
        layers.extend(Sequential::conv_block(din, 1, k, None, config.bn_eps, &mut rng));
        if config.output_projection {
            layers.push(Layer::Conv(Conv2d::init(1, 1, 1, true, &mut rng)));
        }
        let decoder = Sequential::new(layers);
        Ok(Self { config: config.clone(), encoder, class_conv, head, decoder })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            encoder: self.encoder.zeros_like(),
            class_conv: self.class_conv.zeros_like(),
            head: self.head.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }

    fn check_input(&self, x: ArrayView3<f64>) -> Result<()> {
        let (n, t, f) = x.dim();
        if n == 0 || t == 0 {
            return Err(Error::InvalidArgument("empty input batch".into()));
        }
        if f != self.config.n_mels {
            return Err(Error::InvalidArgument(format!(
                "model expects {} mel bins, got {f}",
                self.config.n_mels
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("input contains non-finite values".into()));
        }
        Ok(())
    }

    /// Shared representation and class mask in evaluation mode.
    pub fn encode(&self, x: ArrayView3<f64>) -> Result<(Array4<f64>, Array4<f64>)> {
        self.check_input(x)?;
        let shared = self.encoder.forward(x.insert_axis(Axis(1)))?;
        let mask = self.class_conv.forward(shared.view())?;
        Ok((shared, mask))
    }

    /// Reconstruction of the input from the shared representation.
    pub fn decode(&self, shared_rep: ndarray::ArrayView4<f64>) -> Result<Array3<f64>> {
        if shared_rep.len_of(Axis(1)) != self.config.shared_channels()
            || shared_rep.len_of(Axis(3)) != self.config.n_mels
        {
            return Err(Error::InvalidArgument(format!(
                "decoder expects {} channels over {} mel bins, got shape {:?}",
                self.config.shared_channels(),
                self.config.n_mels,
                shared_rep.shape()
            )));
        }
        Ok(self.decoder.forward(shared_rep)?.index_axis_move(Axis(1), 0))
    }

    fn pool(&self, mask: &Array4<f64>) -> Result<(Array2<f64>, Vec<AttentionMaps>)> {
        let (n, k, _, _) = mask.dim();
        let mut preds = Array2::zeros((n, k));
        let mut maps = Vec::new();
        for (z, mut row) in mask.outer_iter().zip(preds.outer_iter_mut()) {
            let pred = match (&self.config.head, &self.head) {
                (HeadKind::GlobalMax, _) => global_max_pool(z)?,
                (HeadKind::GlobalAverage, _) => global_avg_pool(z)?,
                (HeadKind::WeightedRank(decay), _) => gwrp(z, decay)?,
                (HeadKind::SingleAttention, HeadParams::SingleStep(p)) => single_step_attention(z, p)?,
                (HeadKind::TwoStepAttention, HeadParams::TwoStep(p)) => {
                    let (pred, m) = two_step_attention(z, p)?;
                    maps.push(m);
                    pred
                }
                _ => return Err(Error::InvalidConfig("head parameters do not match the configured head".into())),
            };
            row.assign(&pred.probs);
        }
        Ok((preds, maps))
    }

    /// Inference pass. The decoder runs only when `reconstruct` is set.
    pub fn forward(&self, x: ArrayView3<f64>, reconstruct: bool) -> Result<ForwardOutputs> {
        let (shared_rep, class_mask) = self.encode(x)?;
        let (predictions, attention) = self.pool(&class_mask)?;
        let reconstruction = if reconstruct { Some(self.decode(shared_rep.view())?) } else { None };
        Ok(ForwardOutputs { shared_rep, class_mask, predictions, attention, reconstruction })
    }

    /// Training-mode pass (batch statistics). The decoder runs only when
    /// `reconstruct` is set, so it receives no gradient otherwise.
    pub fn forward_train(&self, x: ArrayView3<f64>, reconstruct: bool) -> Result<(ForwardOutputs, ModelTrace)> {
        self.check_input(x)?;
        let (shared_rep, encoder) = self.encoder.forward_train(x.insert_axis(Axis(1)))?;
        let class_mask = self.class_conv.forward(shared_rep.view())?;
        let (predictions, attention) = self.pool(&class_mask)?;
        let (reconstruction, decoder) = if reconstruct {
            let (r, t) = self.decoder.forward_train(shared_rep.view())?;
            (Some(r.index_axis_move(Axis(1), 0)), Some(t))
        } else {
            (None, None)
        };
        let trace = ModelTrace {
            encoder,
            decoder,
            shared_rep: shared_rep.clone(),
            class_mask: class_mask.clone(),
        };
        Ok((ForwardOutputs { shared_rep, class_mask, predictions, attention, reconstruction }, trace))
    }

    /// Gradients of a loss given `dL/dP` (`N x K`) and, when the decoder ran,
    /// `dL/dX̄` (`N x T x F`). Returned in the shape of `self`.
    pub fn backward(
        &self,
        trace: &ModelTrace,
        d_probs: ArrayView2<f64>,
        d_recon: Option<ArrayView3<f64>>,
    ) -> Result<ModelParams> {
        let mut grads = self.zeros_like();
        let (n, k, t, f) = trace.class_mask.dim();
        if d_probs.dim() != (n, k) {
            return Err(Error::InvalidArgument(format!(
                "prediction gradient has shape {:?}, expected {:?}",
                d_probs.dim(),
                (n, k)
            )));
        }
        let mut d_mask = Array4::zeros((n, k, t, f));
        for ((z, dp), mut dz_out) in trace
            .class_mask
            .outer_iter()
            .zip(d_probs.outer_iter())
            .zip(d_mask.outer_iter_mut())
        {
            let dz = match (&self.config.head, &self.head, &mut grads.head) {
                (HeadKind::GlobalMax, _, _) => global_max_pool_backward(z, dp)?,
                (HeadKind::GlobalAverage, _, _) => global_avg_pool_backward(z, dp)?,
                (HeadKind::WeightedRank(decay), _, _) => gwrp_backward(z, decay, dp)?,
                (HeadKind::SingleAttention, HeadParams::SingleStep(p), HeadParams::SingleStep(g)) => {
                    let (dz, gp) = single_step_attention_backward(z, p, dp)?;
                    add_into(g.tensors_mut(), gp.tensors());
                    dz
                }
                (HeadKind::TwoStepAttention, HeadParams::TwoStep(p), HeadParams::TwoStep(g)) => {
                    let (dz, gp) = two_step_attention_backward(z, p, dp)?;
                    add_into(g.tensors_mut(), gp.tensors());
                    dz
                }
                _ => return Err(Error::InvalidConfig("head parameters do not match the configured head".into())),
            };
            dz_out.assign(&dz);
        }
        let mut d_shared = self
            .class_conv
            .backward(trace.shared_rep.view(), d_mask.view(), &mut grads.class_conv);
        match (d_recon, &trace.decoder) {
            (Some(dr), Some(dec)) => {
                if dr.dim() != (n, t, f) {
                    return Err(Error::InvalidArgument("reconstruction gradient has the wrong shape".into()));
                }
                d_shared += &self.decoder.backward(dec, dr.insert_axis(Axis(1)).to_owned(), &mut grads.decoder)?;
            }
            (Some(_), None) => {
                return Err(Error::InvalidArgument("decoder did not run in this forward pass".into()));
            }
            _ => {}
        }
        self.encoder.backward(&trace.encoder, d_shared, &mut grads.encoder)?;
        Ok(grads)
    }

    /// Moving-average update of batch-norm statistics from a training pass.
    pub fn update_running_stats(&mut self, trace: &ModelTrace) {
        let m = self.config.bn_momentum;
        self.encoder.update_running_stats(&trace.encoder, m);
        if let Some(dec) = &trace.decoder {
            self.decoder.update_running_stats(dec, m);
        }
    }

    /// Trainable tensors tagged by group, in a fixed order.
    pub fn grouped_tensors(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out: Vec<(ParamGroup, &[f64])> = Vec::new();
        out.extend(self.encoder.tensors().into_iter().map(|t| (ParamGroup::Encoder, t)));
        out.push((ParamGroup::ClassConv, self.class_conv.weight.as_slice().expect("contiguous")));
        if let Some(b) = &self.class_conv.bias {
            out.push((ParamGroup::ClassConv, b.as_slice().expect("contiguous")));
        }
        out.extend(self.head.tensors().into_iter().map(|t| (ParamGroup::Head, t)));
        out.extend(self.decoder.tensors().into_iter().map(|t| (ParamGroup::Decoder, t)));
        out
    }

    pub fn grouped_tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = Vec::new();
        out.extend(self.encoder.tensors_mut().into_iter().map(|t| (ParamGroup::Encoder, t)));
        out.push((ParamGroup::ClassConv, self.class_conv.weight.as_slice_mut().expect("contiguous")));
        if let Some(b) = &mut self.class_conv.bias {
            out.push((ParamGroup::ClassConv, b.as_slice_mut().expect("contiguous")));
        }
        out.extend(self.head.tensors_mut().into_iter().map(|t| (ParamGroup::Head, t)));
        out.extend(self.decoder.tensors_mut().into_iter().map(|t| (ParamGroup::Decoder, t)));
        out
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.grouped_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.grouped_tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

fn add_into(dst: Vec<&mut [f64]>, src: Vec<&[f64]>) {
    for (d, s) in dst.into_iter().zip(src) {
        for (a, b) in d.iter_mut().zip(s) {
            *a += b;
        }
    }
}
