use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::LogMelSpectrogram;
use crate::error::{Error, Result};

const MIN_STD: f64 = 1e-8;

/// Per-mel-bin zero-mean, unit-variance scaling fitted on training clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn fit<'a, I>(specs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LogMelSpectrogram>,
    {
        let mut sum: Option<Array1<f64>> = None;
        let mut sum_sq: Option<Array1<f64>> = None;
        let mut count = 0usize;
        for spec in specs {
            let s = spec.values.sum_axis(Axis(0));
            let sq = spec.values.mapv(|v| v * v).sum_axis(Axis(0));
            match (&mut sum, &mut sum_sq) {
                (Some(a), Some(b)) => {
                    if a.len() != s.len() {
                        return Err(Error::InvalidInput("mixed mel band counts".into()));
                    }
                    *a += &s;
                    *b += &sq;
                }
                _ => {
                    sum = Some(s);
                    sum_sq = Some(sq);
                }
            }
            count += spec.n_frames();
        }
        let (sum, sum_sq) = match (sum, sum_sq) {
            (Some(a), Some(b)) if count > 0 => (a, b),
            _ => return Err(Error::InvalidInput("cannot fit on zero frames".into())),
        };
        let n = count as f64;
        let mean = &sum / n;
        let std = (&sum_sq / n - &mean * &mean).mapv(|v| v.max(0.0).sqrt().max(MIN_STD));
        Ok(Self { mean, std })
    }

    pub fn identity(n_mels: usize) -> Self {
        Self {
            mean: Array1::zeros(n_mels),
            std: Array1::ones(n_mels),
        }
    }

    pub fn apply(&self, spec: &LogMelSpectrogram) -> Result<Array2<f64>> {
        if spec.n_mels() != self.mean.len() {
            return Err(Error::InvalidInput(format!(
                "standardizer fitted on {} bands applied to {}",
                self.mean.len(),
                spec.n_mels()
            )));
        }
        Ok((&spec.values - &self.mean) / &self.std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn standardized_training_data_has_zero_mean_unit_variance() {
        let a = LogMelSpectrogram {
            values: array![[1.0, 10.0], [3.0, 10.0]],
        };
        let b = LogMelSpectrogram {
            values: array![[5.0, 10.0]],
        };
        let s = Standardizer::fit([&a, &b]).unwrap();
        assert!((s.mean[0] - 3.0).abs() < 1e-12);
        let za = s.apply(&a).unwrap();
        let zb = s.apply(&b).unwrap();
        let col: Vec<f64> = za.column(0).iter().chain(zb.column(0).iter()).copied().collect();
        let m = col.iter().sum::<f64>() / 3.0;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        // constant band does not blow up
        assert!(za.column(1).iter().all(|v| v.is_finite()));
    }
}
