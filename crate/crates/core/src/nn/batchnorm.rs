use ndarray::{Array1, Array4, ArrayView4, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm2d {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
}

/// What a batch-norm forward pass keeps for its backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Array4<f64>,
    pub inv_std: Array1<f64>,
    /// Batch statistics, present only in training mode.
    pub batch_mean: Option<Array1<f64>>,
    pub batch_var: Option<Array1<f64>>,
    pub count: usize,
}

impl BatchNorm2d {
    pub fn new(channels: usize, eps: f64) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.gamma.len();
        Self {
            gamma: Array1::zeros(c),
            beta: Array1::zeros(c),
            running_mean: Array1::zeros(c),
            running_var: Array1::zeros(c),
            eps: self.eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with batch statistics when `train` is set, otherwise with
    /// the running estimates.
    pub fn forward(&self, x: ArrayView4<f64>, train: bool) -> Result<(Array4<f64>, BatchNormCache)> {
        let c = self.channels();
        if x.len_of(Axis(1)) != c {
            return Err(Error::InvalidArgument(format!(
                "batch norm expects {c} channels, got {}",
                x.len_of(Axis(1))
            )));
        }
        let count = x.len() / c.max(1);
        let (mean, var) = if train {
            let mut mean = Array1::zeros(c);
            let mut var = Array1::zeros(c);
            for ch in 0..c {
                let plane = x.index_axis(Axis(1), ch);
                let m = plane.sum() / count as f64;
                let v = plane.fold(0.0, |acc, &v| acc + (v - m) * (v - m)) / count as f64;
                mean[ch] = m;
                var[ch] = v;
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut normalized = x.to_owned();
        let mut y = Array4::zeros(x.raw_dim());
        for ch in 0..c {
            let (m, s, g, b) = (mean[ch], inv_std[ch], self.gamma[ch], self.beta[ch]);
            Zip::from(normalized.index_axis_mut(Axis(1), ch))
                .and(y.index_axis_mut(Axis(1), ch))
                .for_each(|n, out| {
                    *n = (*n - m) * s;
                    *out = g * *n + b;
                });
        }
        let cache = BatchNormCache {
            normalized,
            inv_std,
            batch_mean: train.then_some(mean),
            batch_var: train.then_some(var),
            count,
        };
        Ok((y, cache))
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: ArrayView4<f64>, grad: &mut BatchNorm2d) -> Array4<f64> {
        let c = self.channels();
        let m = cache.count as f64;
        let train = cache.batch_mean.is_some();
        let mut dx = Array4::zeros(dy.raw_dim());
        for ch in 0..c {
            let dy_c = dy.index_axis(Axis(1), ch);
            let xhat = cache.normalized.index_axis(Axis(1), ch);
            let sum_dy = dy_c.sum();
            let sum_dy_xhat = Zip::from(&dy_c).and(&xhat).fold(0.0, |acc, &d, &n| acc + d * n);
            grad.gamma[ch] += sum_dy_xhat;
            grad.beta[ch] += sum_dy;
            let g = self.gamma[ch];
            let s = cache.inv_std[ch];
            let mut dx_c = dx.index_axis_mut(Axis(1), ch);
            if train {
                // dxhat = g * dy; dx = s/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                let k = g * s / m;
                Zip::from(&mut dx_c)
                    .and(&dy_c)
                    .and(&xhat)
                    .for_each(|o, &d, &n| *o = k * (m * d - sum_dy - n * sum_dy_xhat));
            } else {
                Zip::from(&mut dx_c).and(&dy_c).for_each(|o, &d| *o = g * s * d);
            }
        }
        dx
    }

    /// Exponential moving average update from a training-mode cache.
    /// The variance estimate is the unbiased one.
    pub fn update_running(&mut self, cache: &BatchNormCache, momentum: f64) {
        if let (Some(mean), Some(var)) = (&cache.batch_mean, &cache.batch_var) {
            let m = cache.count as f64;
            let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            Zip::from(&mut self.running_mean)
                .and(mean)
                .for_each(|r, &b| *r = (1.0 - momentum) * *r + momentum * b);
            Zip::from(&mut self.running_var)
                .and(var)
                .for_each(|r, &b| *r = (1.0 - momentum) * *r + momentum * b * unbiased);
        }
    }
}
