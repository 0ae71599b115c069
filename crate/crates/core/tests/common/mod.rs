//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written with plain loops over `Vec`s and its own
//! scalar helpers, so agreement with the library is evidence rather than
//! tautology.
#![allow(dead_code)]

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use weaksed::pooling::{AttentionParams, Linear, SingleAttentionParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn uniform3(rng: &mut ChaCha8Rng, dim: (usize, usize, usize), scale: f64) -> Array3<f64> {
    Array3::from_shape_simple_fn(dim, || rng.random_range(-scale..scale))
}

pub fn random_linear(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize, scale: f64) -> Linear {
    Linear {
        weight: Array2::from_shape_simple_fn((out_dim, in_dim), || rng.random_range(-scale..scale)),
        bias: Array1::from_shape_simple_fn(out_dim, || rng.random_range(-scale..scale)),
    }
}

/// Two-step attention parameters with random weights and biases.
pub fn random_two_step(
    rng: &mut ChaCha8Rng,
    k: usize,
    f: usize,
    per_class: bool,
    scale: f64,
) -> AttentionParams {
    let groups = if per_class { k } else { 1 };
    AttentionParams {
        step1_attention: (0..groups).map(|_| random_linear(rng, f, f, scale)).collect(),
        step1_classify: (0..groups).map(|_| random_linear(rng, f, f, scale)).collect(),
        step2_attention: random_linear(rng, k, k, scale),
        step2_classify: random_linear(rng, k, k, scale),
    }
}

pub fn random_single_step(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> SingleAttentionParams {
    SingleAttentionParams {
        attention: random_linear(rng, k, k, scale),
        classify: random_linear(rng, k, k, scale),
    }
}

fn logistic(x: f64) -> f64 {
    if x < -700.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Logistic clamped away from 0 and 1 by the library's squash margin.
fn squashed(x: f64) -> f64 {
    logistic(x).max(1e-12).min(1.0 - 1e-12)
}

fn affine(l: &Linear, row: usize, x: &[f64]) -> f64 {
    let mut acc = l.bias[row];
    for (j, v) in x.iter().enumerate() {
        acc += l.weight[[row, j]] * v;
    }
    acc
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub struct TwoStepReference {
    pub step1_weights: Vec<Vec<Vec<f64>>>,
    pub step1_output: Vec<Vec<f64>>,
    pub step2_weights: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

/// Two-step attention pooling written out entry by entry.
///
/// Step one, per class `k` and frame `t`, over frequency:
/// `a = σ(W_a z + b_a)`, `Ẑ_a1 = softmax_F(a)`, `c = σ(W_c z + b_c)`,
/// `Z_p1[k, t] = Σ_f c[f] Ẑ_a1[f]`.
///
/// Step two, per frame over classes then per class over time:
/// `a2 = σ(V_a Z_p1[:, t] + d_a)`, `Ẑ_a2[k] = softmax_T(a2[k, :])`,
/// `c2 = σ(V_c Z_p1[:, t] + d_c)`, `Z_p2[k] = Σ_t c2[k, t] Ẑ_a2[k, t]`.
pub fn two_step_reference(z: &Array3<f64>, p: &AttentionParams) -> TwoStepReference {
    let (n_k, n_t, n_f) = z.dim();
    let mut step1_weights = vec![vec![vec![0.0; n_f]; n_t]; n_k];
    let mut step1_output = vec![vec![0.0; n_t]; n_k];
    for k in 0..n_k {
        let g = if p.step1_attention.len() == 1 { 0 } else { k };
        for t in 0..n_t {
            let zv: Vec<f64> = (0..n_f).map(|f| z[[k, t, f]]).collect();
            let a: Vec<f64> = (0..n_f).map(|f| logistic(affine(&p.step1_attention[g], f, &zv))).collect();
            let c: Vec<f64> = (0..n_f).map(|f| squashed(affine(&p.step1_classify[g], f, &zv))).collect();
            let w = softmax(&a);
            step1_output[k][t] = (0..n_f).map(|f| c[f] * w[f]).sum();
            step1_weights[k][t] = w;
        }
    }
    let mut a2 = vec![vec![0.0; n_t]; n_k];
    let mut c2 = vec![vec![0.0; n_t]; n_k];
    for t in 0..n_t {
        let col: Vec<f64> = (0..n_k).map(|k| step1_output[k][t]).collect();
        for k in 0..n_k {
            a2[k][t] = logistic(affine(&p.step2_attention, k, &col));
            c2[k][t] = squashed(affine(&p.step2_classify, k, &col));
        }
    }
    let step2_weights: Vec<Vec<f64>> = a2.iter().map(|row| softmax(row)).collect();
    let probs = (0..n_k)
        .map(|k| (0..n_t).map(|t| c2[k][t] * step2_weights[k][t]).sum())
        .collect();
    TwoStepReference { step1_weights, step1_output, step2_weights, probs }
}

/// Single-step attention: per location the class vector is mapped by
/// `W_a` (raw logits) and `W_c` (sigmoid); logits are softmax-normalized
/// per class over all `T * F` locations.
pub fn single_step_reference(z: &Array3<f64>, p: &SingleAttentionParams) -> Vec<f64> {
    let (n_k, n_t, n_f) = z.dim();
    let mut logits = vec![Vec::new(); n_k];
    let mut cls = vec![Vec::new(); n_k];
    for t in 0..n_t {
        for f in 0..n_f {
            let v: Vec<f64> = (0..n_k).map(|k| z[[k, t, f]]).collect();
            for k in 0..n_k {
                logits[k].push(affine(&p.attention, k, &v));
                cls[k].push(squashed(affine(&p.classify, k, &v)));
            }
        }
    }
    (0..n_k)
        .map(|k| {
            let w = softmax(&logits[k]);
            w.iter().zip(&cls[k]).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(x);
        x[i] = orig - h;
        let down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference norm when both
/// are below `1e-10`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Fraction of (positive, negative) pairs ordered correctly, ties one half.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut good = 0.0;
    let mut pairs = 0usize;
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                good += 1.0;
            } else if scores[i] == scores[j] {
                good += 0.5;
            }
        }
    }
    (pairs > 0).then(|| good / pairs as f64)
}

/// `(TP, FP)` for one class column with prediction `score >= threshold`.
pub fn count_tp_fp(scores: &[f64], labels: &[u8], threshold: f64) -> (usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    for (s, l) in scores.iter().zip(labels) {
        if *s >= threshold {
            if *l == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    (tp, fp)
}

/// Micro precision, macro precision and macro AUC by brute force. Empty
/// denominators count as 0; classes without both labels are left out of
/// the AUC mean.
pub fn brute_metrics(scores: &Array2<f64>, labels: &Array2<u8>, threshold: f64) -> (f64, f64, Option<f64>) {
    let (_, n_k) = scores.dim();
    let (mut tp_all, mut pred_all) = (0usize, 0usize);
    let mut precisions = Vec::new();
    let mut aucs = Vec::new();
    for k in 0..n_k {
        let s: Vec<f64> = scores.column(k).to_vec();
        let l: Vec<u8> = labels.column(k).to_vec();
        let (tp, fp) = count_tp_fp(&s, &l, threshold);
        tp_all += tp;
        pred_all += tp + fp;
        precisions.push(if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 });
        if let Some(a) = pairwise_auc(&s, &l) {
            aucs.push(a);
        }
    }
    let micro = if pred_all == 0 { 0.0 } else { tp_all as f64 / pred_all as f64 };
    let macro_p = precisions.iter().sum::<f64>() / n_k as f64;
    let auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    (micro, macro_p, auc)
}
