//! Minimal convolutional building blocks with hand-written backward passes.
//!
//! Tensors are `N x C x T x F`. Every layer keeps the spatial shape.

mod batchnorm;
mod conv;
mod pool;

pub use batchnorm::{BatchNorm2d, BatchNormCache};
pub use conv::Conv2d;
pub use pool::{avg_pool3, avg_pool3_backward, max_pool3, max_pool3_backward};

use ndarray::{Array4, ArrayView4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    #[default]
    Avg,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    Relu,
    AvgPool3,
    MaxPool3,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        match self {
            Layer::Conv(c) => Layer::Conv(c.zeros_like()),
            Layer::BatchNorm(b) => Layer::BatchNorm(b.zeros_like()),
            other => other.clone(),
        }
    }
}

/// Activations recorded by a forward pass: the input of every layer plus
/// the batch-norm caches.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Array4<f64>>,
    bn: Vec<Option<BatchNormCache>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// `[conv -> bn -> relu] x 2`, optionally followed by a 3x3 pool.
    pub fn conv_block<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pool: Option<PoolKind>,
        bn_eps: f64,
        rng: &mut R,
    ) -> Vec<Layer> {
        let mut layers = Vec::with_capacity(7);
        for cin in [in_channels, out_channels] {
            layers.push(Layer::Conv(Conv2d::init(cin, out_channels, kernel, false, rng)));
            layers.push(Layer::BatchNorm(BatchNorm2d::new(out_channels, bn_eps)));
            layers.push(Layer::Relu);
        }
        match pool {
            Some(PoolKind::Avg) => layers.push(Layer::AvgPool3),
            Some(PoolKind::Max) => layers.push(Layer::MaxPool3),
            None => {}
        }
        layers
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(Layer::zeros_like).collect() }
    }

    pub fn out_channels(&self, in_channels: usize) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Conv(c) => Some(c.out_channels()),
                _ => None,
            })
            .unwrap_or(in_channels)
    }

    /// Inference pass using running batch-norm statistics.
    pub fn forward(&self, x: ArrayView4<f64>) -> Result<Array4<f64>> {
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv(c) => c.forward(h.view())?,
                Layer::BatchNorm(b) => b.forward(h.view(), false)?.0,
                Layer::Relu => h.mapv_into(|v| v.max(0.0)),
                Layer::AvgPool3 => avg_pool3(h.view()),
                Layer::MaxPool3 => max_pool3(h.view()),
            };
        }
        Ok(h)
    }

    /// Training pass with batch statistics; returns the trace needed by
    /// [`Sequential::backward`].
    pub fn forward_train(&self, x: ArrayView4<f64>) -> Result<(Array4<f64>, Trace)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut bn = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Conv(c) => (c.forward(h.view())?, None),
                Layer::BatchNorm(b) => {
                    let (y, cache) = b.forward(h.view(), true)?;
                    (y, Some(cache))
                }
                Layer::Relu => (h.mapv(|v| v.max(0.0)), None),
                Layer::AvgPool3 => (avg_pool3(h.view()), None),
                Layer::MaxPool3 => (max_pool3(h.view()), None),
            };
            inputs.push(h);
            bn.push(cache);
            h = next;
        }
        Ok((h, Trace { inputs, bn }))
    }

    /// Accumulates parameter gradients into `grads` (same structure as
    /// `self`) and returns the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, dy: Array4<f64>, grads: &mut Sequential) -> Result<Array4<f64>> {
        if trace.inputs.len() != self.layers.len() || grads.layers.len() != self.layers.len() {
            return Err(Error::InvalidArgument("trace does not match the network".into()));
        }
        let mut d = dy;
        for i in (0..self.layers.len()).rev() {
            let input = &trace.inputs[i];
            d = match (&self.layers[i], &mut grads.layers[i]) {
                (Layer::Conv(c), Layer::Conv(g)) => c.backward(input.view(), d.view(), g),
                (Layer::BatchNorm(b), Layer::BatchNorm(g)) => {
                    let cache = trace.bn[i]
                        .as_ref()
                        .ok_or_else(|| Error::InvalidArgument("missing batch-norm cache".into()))?;
                    b.backward(cache, d.view(), g)
                }
                (Layer::Relu, _) => {
                    ndarray::Zip::from(&mut d).and(input).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    d
                }
                (Layer::AvgPool3, _) => avg_pool3_backward(d.view()),
                (Layer::MaxPool3, _) => max_pool3_backward(input.view(), d.view()),
                _ => return Err(Error::InvalidArgument("gradient buffer does not match the network".into())),
            };
        }
        Ok(d)
    }

    pub fn update_running_stats(&mut self, trace: &Trace, momentum: f64) {
        for (layer, cache) in self.layers.iter_mut().zip(&trace.bn) {
            if let (Layer::BatchNorm(b), Some(c)) = (layer, cache) {
                b.update_running(c, momentum);
            }
        }
    }

    /// Trainable tensors in a fixed order (running statistics excluded).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(c.weight.as_slice().expect("contiguous"));
                    if let Some(b) = &c.bias {
                        out.push(b.as_slice().expect("contiguous"));
                    }
                }
                Layer::BatchNorm(b) => {
                    out.push(b.gamma.as_slice().expect("contiguous"));
                    out.push(b.beta.as_slice().expect("contiguous"));
                }
                _ => {}
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(c.weight.as_slice_mut().expect("contiguous"));
                    if let Some(b) = &mut c.bias {
                        out.push(b.as_slice_mut().expect("contiguous"));
                    }
                }
                Layer::BatchNorm(b) => {
                    out.push(b.gamma.as_slice_mut().expect("contiguous"));
                    out.push(b.beta.as_slice_mut().expect("contiguous"));
                }
                _ => {}
            }
        }
        out
    }

    pub fn running_stats(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::BatchNorm(b) = layer {
                out.push(b.running_mean.as_slice().expect("contiguous"));
                out.push(b.running_var.as_slice().expect("contiguous"));
            }
        }
        out
    }
}
