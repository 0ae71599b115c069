//! Parameter-free global poolings: max, average and weighted rank.
//!
//! Each head reduces the `T x F` plane of every class to one value and
//! squashes it. The `*_values` functions expose the pre-squash reduction.

use ndarray::{Array1, Array3, ArrayView1, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{check_finite, sigmoid_slope, squash, ClipPrediction};
use crate::error::{Error, Result};

/// Decay of the weighted rank pooling: the `j`-th largest entry gets weight
/// `r^j` (with `0^0 = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwrpDecay {
    pub r: f64,
    /// Optional per-class override of `r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Vec<f64>>,
}

impl Default for GwrpDecay {
    fn default() -> Self {
        Self {
            r: 0.5,
            per_class: None,
        }
    }
}

impl GwrpDecay {
    pub fn uniform(r: f64) -> Self {
        Self { r, per_class: None }
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        let check = |r: f64| {
            if (0.0..=1.0).contains(&r) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("GWRP decay r must be in [0, 1], got {r}")))
            }
        };
        check(self.r)?;
        if let Some(per_class) = &self.per_class {
            if per_class.len() != n_classes {
                return Err(Error::InvalidArgument(format!(
                    "{} per-class GWRP decays for {n_classes} classes",
                    per_class.len()
                )));
            }
            per_class.iter().copied().try_for_each(check)?;
        }
        Ok(())
    }

    fn for_class(&self, k: usize) -> f64 {
        self.per_class.as_ref().map_or(self.r, |v| v[k])
    }
}

fn validate_mask(z: ArrayView3<f64>) -> Result<()> {
    let (k, t, f) = z.dim();
    if k == 0 || t == 0 || f == 0 {
        return Err(Error::InvalidArgument(format!("empty class mask {:?}", z.dim())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("class mask contains non-finite values".into()));
    }
    Ok(())
}

/// Per-class maximum over `(t, f)`.
pub fn global_max_values(z: ArrayView3<f64>) -> Result<Array1<f64>> {
    validate_mask(z)?;
    Ok(z.outer_iter()
        .map(|plane| plane.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Per-class mean over `(t, f)`, summed in row-major order.
pub fn global_avg_values(z: ArrayView3<f64>) -> Result<Array1<f64>> {
    validate_mask(z)?;
    Ok(z.outer_iter()
        .map(|plane| plane.iter().fold(0.0, |acc, &v| acc + v) / plane.len() as f64)
        .collect())
}

pub fn global_max_pool(z: ArrayView3<f64>) -> Result<ClipPrediction> {
    Ok(ClipPrediction {
        probs: global_max_values(z)?.mapv(squash),
    })
}

pub fn global_avg_pool(z: ArrayView3<f64>) -> Result<ClipPrediction> {
    Ok(ClipPrediction {
        probs: global_avg_values(z)?.mapv(squash),
    })
}

/// Rank weights for one class plane, indexed by row-major position.
/// Ties keep their original order.
fn rank_weights(values: &[f64], r: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut weights = vec![0.0; values.len()];
    let mut w = 1.0;
    for &i in &order {
        weights[i] = w;
        w *= r;
    }
    weights
}

/// Per-class weighted rank pooling before the squash:
/// `sum_j r^j v_(j) / sum_j r^j` over entries sorted descending.
pub fn gwrp_values(z: ArrayView3<f64>, decay: &GwrpDecay) -> Result<Array1<f64>> {
    validate_mask(z)?;
    decay.validate(z.len_of(Axis(0)))?;
    Ok(z.outer_iter()
        .enumerate()
        .map(|(k, plane)| {
            let values: Vec<f64> = plane.iter().copied().collect();
            let weights = rank_weights(&values, decay.for_class(k));
            let num = values.iter().zip(&weights).fold(0.0, |acc, (v, w)| acc + w * v);
            let den = weights.iter().fold(0.0, |acc, w| acc + w);
            num / den
        })
        .collect())
}

pub fn gwrp(z: ArrayView3<f64>, decay: &GwrpDecay) -> Result<ClipPrediction> {
    Ok(ClipPrediction {
        probs: gwrp_values(z, decay)?.mapv(squash),
    })
}

fn check_upstream(z: ArrayView3<f64>, d_probs: ArrayView1<f64>) -> Result<()> {
    if d_probs.len() != z.len_of(Axis(0)) {
        return Err(Error::InvalidArgument(format!(
            "gradient has {} entries for {} classes",
            d_probs.len(),
            z.len_of(Axis(0))
        )));
    }
    check_finite(d_probs, "upstream gradient")
}

/// Gradient routes to the first maximal entry of each class.
pub fn global_max_pool_backward(z: ArrayView3<f64>, d_probs: ArrayView1<f64>) -> Result<Array3<f64>> {
    check_upstream(z, d_probs)?;
    let maxima = global_max_values(z)?;
    let mut dz = Array3::zeros(z.raw_dim());
    for (k, (plane, mut dplane)) in z.outer_iter().zip(dz.outer_iter_mut()).enumerate() {
        let pos = plane
            .iter()
            .position(|&v| v == maxima[k])
            .expect("maximum is an element");
        let slope = sigmoid_slope(squash(maxima[k]));
        let cols = plane.ncols();
        dplane[[pos / cols, pos % cols]] = d_probs[k] * slope;
    }
    Ok(dz)
}

pub fn global_avg_pool_backward(z: ArrayView3<f64>, d_probs: ArrayView1<f64>) -> Result<Array3<f64>> {
    check_upstream(z, d_probs)?;
    let means = global_avg_values(z)?;
    let mut dz = Array3::zeros(z.raw_dim());
    for (k, mut dplane) in dz.outer_iter_mut().enumerate() {
        let n = dplane.len() as f64;
        dplane.fill(d_probs[k] * sigmoid_slope(squash(means[k])) / n);
    }
    Ok(dz)
}

/// Gradient of [`gwrp`] with the ranking held fixed.
pub fn gwrp_backward(
    z: ArrayView3<f64>,
    decay: &GwrpDecay,
    d_probs: ArrayView1<f64>,
) -> Result<Array3<f64>> {
    check_upstream(z, d_probs)?;
    let pooled = gwrp_values(z, decay)?;
    let mut dz = Array3::zeros(z.raw_dim());
    for (k, (plane, mut dplane)) in z.outer_iter().zip(dz.outer_iter_mut()).enumerate() {
        let values: Vec<f64> = plane.iter().copied().collect();
        let weights = rank_weights(&values, decay.for_class(k));
        let den: f64 = weights.iter().sum();
        let scale = d_probs[k] * sigmoid_slope(squash(pooled[k])) / den;
        Zip::from(&mut dplane)
            .and(&ndarray::ArrayView2::from_shape(plane.raw_dim(), &weights).expect("same shape"))
            .for_each(|d, &w| *d = scale * w);
    }
    Ok(dz)
}
