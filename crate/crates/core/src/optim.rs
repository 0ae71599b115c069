//! Adam with the usual defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Groups left untouched by [`Adam::step`].
    frozen: Vec<ParamGroup>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ModelParams, frozen: Vec<ParamGroup>) -> Self {
        let zeros: Vec<Vec<f64>> = params.grouped_tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros, frozen }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        let grads = grads.grouped_tensors();
        let mut tensors = params.grouped_tensors_mut();
        if grads.len() != tensors.len() || tensors.len() != self.m.len() {
            return Err(Error::InvalidArgument("gradient layout does not match the model".into()));
        }
        self.step += 1;
        let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, eps } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((group, p), (_, g)), (m, v)) in tensors
            .iter_mut()
            .zip(&grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if self.frozen.contains(group) {
                continue;
            }
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let params = ModelParams::init(&ModelConfig::desk(2), 0).unwrap();
        let mut p = params.clone();
        let mut g = params.zeros_like();
        g.class_conv.weight.fill(3.0);
        let mut adam = Adam::new(AdamConfig::default(), &p, vec![ParamGroup::Decoder]);
        adam.step(&mut p, &g).unwrap();
        let moved = &params.class_conv.weight - &p.class_conv.weight;
        assert!(moved.iter().all(|d| (d - 1e-3).abs() < 1e-9));
        assert_eq!(p.encoder, params.encoder);
        assert_eq!(p.decoder, params.decoder);
    }
}
