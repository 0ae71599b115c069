//! Acceptance run: one line per criterion, nonzero exit if any hard check fails.
//!
//! Run with `cargo test --test acceptance`. The toy training run dominates
//! the wall time (a few minutes on one core).

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use weaksed::audio::AudioClip;
use weaksed::datamix::{generate_toy_corpus, mix_clip, BackgroundKind, CorpusConfig, EventKind};
use weaksed::features::{log_mel, mel_filterbank, read_matrix_records, FeatureConfig};
use weaksed::metrics::{evaluate, roc_auc, EvalBatch};
use weaksed::model::{Checkpoint, ModelConfig, ModelParams};
use weaksed::pooling::*;
use weaksed::training::{
    bce_grad, bce_loss, mse_grad, mse_loss, mtl_loss, run_ablation, train_fold, AblationConfig, CellOutcome,
    FeatureSet, LossConfig, TrainConfig,
};
use weaksed::viz;

// Criterion 1
const ORACLE_TOL: f64 = 1e-6;
const ORACLE_INSTANCES: usize = 200;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
// Criterion 2
const GWRP_TENSORS: usize = 1000;
// Criterion 3
const NORM_TOL: f64 = 1e-6;
const EXTREME_LOGIT: f64 = 1e3;
// Criterion 4
const FD_STEP: f64 = 1e-5;
const POOL_GRAD_TOL: f64 = 1e-4;
const MODEL_GRAD_TOL: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
// Criterion 5
const METRIC_TOL: f64 = 1e-9;
const METRIC_BATCHES: usize = 1000;
// Criterion 6
const SNR_TOL_DB: f64 = 0.25;
const CLIPS_PER_SNR: usize = 200;
// Criterion 8
const TOY_MIN_AUC: f64 = 0.90;
const TOY_EPOCHS: usize = 30;
const TOY_BUDGET: Duration = Duration::from_secs(15 * 60);
const GMP_MARGIN: f64 = 0.02;
const TOY_SEED: u64 = 7;
// Criterion 9
const ABLATION_ALPHAS: [f64; 3] = [0.0, 0.001, 0.01];
const ABLATION_EPOCHS: usize = 4;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg.into()) }
}

fn max_abs(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c1_oracles() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for i in 0..ORACLE_INSTANCES {
        let (k, t, f) = (r.random_range(1..=5), r.random_range(1..=5), r.random_range(1..=5));
        let z = uniform3(&mut r, (k, t, f), 3.0);
        let p = random_two_step(&mut r, k, f, i % 2 == 1, 1.5);
        let (pred, maps) = two_step_attention(z.view(), &p).map_err(|e| e.to_string())?;
        let want = two_step_reference(&z, &p);
        worst = worst.max(max_abs(pred.probs.iter().copied(), want.probs.iter().copied()));
        worst = worst.max(max_abs(
            maps.step1_weights.iter().copied(),
            want.step1_weights.iter().flatten().flatten().copied(),
        ));
        worst = worst.max(max_abs(
            maps.step2_weights.iter().copied(),
            want.step2_weights.iter().flatten().copied(),
        ));

        let s = random_single_step(&mut r, k, 1.5);
        let got = single_step_attention(z.view(), &s).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs(got.probs.iter().copied(), single_step_reference(&z, &s)));
    }
    let elapsed = start.elapsed();
    ensure(worst <= ORACLE_TOL, format!("max deviation {worst:e} > {ORACLE_TOL:e}"))?;
    ensure(elapsed < ORACLE_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!("{ORACLE_INSTANCES} instances per head, max deviation {worst:.1e}, {elapsed:.2?}"))
}

fn c2_gwrp_limits() -> Outcome {
    let mut r = rng(102);
    for i in 0..GWRP_TENSORS {
        let dim = (r.random_range(1..=4), r.random_range(1..=6), r.random_range(1..=6));
        let mut z = uniform3(&mut r, dim, 4.0);
        if i % 3 == 0 {
            z.mapv_inplace(f64::round);
        }
        let max = global_max_pool(z.view()).unwrap().probs;
        let avg = global_avg_pool(z.view()).unwrap().probs;
        let r0 = gwrp(z.view(), &GwrpDecay { r: 0.0, per_class: None }).unwrap().probs;
        let r1 = gwrp(z.view(), &GwrpDecay { r: 1.0, per_class: None }).unwrap().probs;
        ensure(r0 == max, format!("tensor {i}: r=0 differs from max pooling"))?;
        ensure(r1 == avg, format!("tensor {i}: r=1 differs from average pooling"))?;
    }
    Ok(format!("{GWRP_TENSORS} tensors, bitwise equal at r=0 and r=1"))
}

fn c3_normalization() -> Outcome {
    let mut r = rng(103);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let (k, t, f) = (r.random_range(1..=5), r.random_range(1..=8), r.random_range(1..=8));
        let scale = if i % 4 == 0 { EXTREME_LOGIT } else { 5.0 };
        let z = uniform3(&mut r, (k, t, f), scale);
        let (_, maps) = two_step_attention(z.view(), &random_two_step(&mut r, k, f, i % 2 == 0, 2.0)).unwrap();
        for s in maps.step1_weights.sum_axis(Axis(2)).iter().chain(maps.step2_weights.sum_axis(Axis(1)).iter()) {
            worst = worst.max((s - 1.0).abs());
        }
    }
    ensure(worst <= NORM_TOL, format!("attention sums off by {worst:e}"))?;

    for _ in 0..100 {
        let z = Array3::from_shape_simple_fn((3, 4, 5), || {
            if r.random_bool(0.5) { EXTREME_LOGIT } else { -EXTREME_LOGIT }
        });
        let p2 = random_two_step(&mut r, 3, 5, false, 2.0);
        let ps = random_single_step(&mut r, 3, 2.0);
        let outputs: Vec<Array1<f64>> = vec![
            two_step_attention(z.view(), &p2).unwrap().0.probs,
            single_step_attention(z.view(), &ps).unwrap().probs,
            global_max_pool(z.view()).unwrap().probs,
            global_avg_pool(z.view()).unwrap().probs,
            gwrp(z.view(), &GwrpDecay { r: 0.5, per_class: None }).unwrap().probs,
        ];
        for probs in outputs {
            ensure(
                probs.iter().all(|&v| v.is_finite() && v > 0.0 && v < 1.0),
                format!("output {probs} leaves (0, 1) at ±{EXTREME_LOGIT}"),
            )?;
        }
    }
    Ok(format!("attention sums within {worst:.1e}; all heads inside (0, 1) at ±{EXTREME_LOGIT}"))
}

fn dot(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative error between `dz` and finite differences of `z -> u · head(z)`.
fn mask_error(z: &Array3<f64>, u: &Array1<f64>, dz: &Array3<f64>, head: impl Fn(&Array3<f64>) -> Array1<f64>) -> f64 {
    let dim = z.raw_dim();
    let mut flat: Vec<f64> = z.iter().copied().collect();
    let numeric = numeric_grad(&mut flat, FD_STEP, |v| {
        dot(u, &head(&Array3::from_shape_vec(dim.clone(), v.to_vec()).unwrap()))
    });
    relative_error(&dz.iter().copied().collect::<Vec<_>>(), &numeric)
}

/// Worst per-tensor relative error between `grads` and finite differences of `eval`.
fn param_error<P: Clone>(
    params: &P,
    grads: &P,
    tensors_mut: impl Fn(&mut P) -> Vec<&mut [f64]>,
    eval: impl Fn(&P) -> f64,
) -> f64 {
    let mut probe = params.clone();
    let mut grads = grads.clone();
    let analytic: Vec<Vec<f64>> = tensors_mut(&mut grads).into_iter().map(|t| t.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (ti, want) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; want.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = tensors_mut(&mut probe)[ti][j];
            tensors_mut(&mut probe)[ti][j] = orig + FD_STEP;
            let up = eval(&probe);
            tensors_mut(&mut probe)[ti][j] = orig - FD_STEP;
            let down = eval(&probe);
            tensors_mut(&mut probe)[ti][j] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(want, &numeric));
    }
    worst
}

fn two_step_tensors(p: &mut AttentionParams) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for l in p.step1_attention.iter_mut().chain(p.step1_classify.iter_mut()) {
        out.extend(l.tensors_mut());
    }
    out.extend(p.step2_attention.tensors_mut());
    out.extend(p.step2_classify.tensors_mut());
    out
}

fn model_tensors(m: &mut ModelParams) -> Vec<&mut [f64]> {
    m.grouped_tensors_mut().into_iter().map(|(_, t)| t).collect()
}

fn c4_gradients() -> Outcome {
    let start = Instant::now();
    let mut r = rng(104);
    let z = uniform3(&mut r, (3, 4, 5), 2.0);
    let u = Array1::from_shape_simple_fn(3, || r.random_range(-1.0..1.0));
    let mut pool_worst: Vec<(&str, f64)> = Vec::new();

    let dz = global_max_pool_backward(z.view(), u.view()).unwrap();
    pool_worst.push(("gmp", mask_error(&z, &u, &dz, |z| global_max_pool(z.view()).unwrap().probs)));
    let dz = global_avg_pool_backward(z.view(), u.view()).unwrap();
    pool_worst.push(("gap", mask_error(&z, &u, &dz, |z| global_avg_pool(z.view()).unwrap().probs)));
    for decay in [0.0, 0.5, 1.0] {
        let d = GwrpDecay { r: decay, per_class: None };
        let dz = gwrp_backward(z.view(), &d, u.view()).unwrap();
        pool_worst.push(("gwrp", mask_error(&z, &u, &dz, |z| gwrp(z.view(), &d).unwrap().probs)));
    }
    for per_class in [false, true] {
        let p = random_two_step(&mut r, 3, 5, per_class, 1.0);
        let (dz, g) = two_step_attention_backward(z.view(), &p, u.view()).unwrap();
        pool_worst.push(("2ap mask", mask_error(&z, &u, &dz, |z| two_step_attention(z.view(), &p).unwrap().0.probs)));
        let e = param_error(&p, &g, two_step_tensors, |p| dot(&u, &two_step_attention(z.view(), p).unwrap().0.probs));
        pool_worst.push(("2ap params", e));
    }
    let s = random_single_step(&mut r, 3, 1.0);
    let (dz, g) = single_step_attention_backward(z.view(), &s, u.view()).unwrap();
    pool_worst.push(("single mask", mask_error(&z, &u, &dz, |z| single_step_attention(z.view(), &s).unwrap().probs)));
    let e = param_error(&s, &g, |p| p.tensors_mut(), |p| dot(&u, &single_step_attention(z.view(), p).unwrap().probs));
    pool_worst.push(("single params", e));
    for (name, e) in &pool_worst {
        ensure(*e <= POOL_GRAD_TOL, format!("{name}: relative error {e:e} > {POOL_GRAD_TOL:e}"))?;
    }

    let mut model_worst: Vec<(String, f64)> = Vec::new();
    let probs = Array2::from_shape_simple_fn((4, 3), || r.random_range(0.05..0.95));
    let targets = Array2::from_shape_simple_fn((4, 3), || f64::from(r.random_bool(0.5) as u8));
    let mut flat: Vec<f64> = probs.iter().copied().collect();
    let numeric = numeric_grad(&mut flat, FD_STEP, |v| {
        bce_loss(Array2::from_shape_vec((4, 3), v.to_vec()).unwrap().view(), targets.view()).unwrap()
    });
    let g = bce_grad(probs.view(), targets.view()).unwrap();
    model_worst.push(("bce".into(), relative_error(g.as_slice().unwrap(), &numeric)));
    let a = uniform3(&mut r, (2, 3, 4), 1.0);
    let b = uniform3(&mut r, (2, 3, 4), 1.0);
    let mut flat: Vec<f64> = a.iter().copied().collect();
    let numeric = numeric_grad(&mut flat, FD_STEP, |v| {
        mse_loss(Array3::from_shape_vec((2, 3, 4), v.to_vec()).unwrap().view(), b.view()).unwrap()
    });
    let g = mse_grad(a.view(), b.view()).unwrap();
    model_worst.push(("mse".into(), relative_error(g.as_slice().unwrap(), &numeric)));

    let x = uniform3(&mut r, (3, 5, 4), 1.0);
    let y = Array2::from_shape_vec((3, 2), vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    let alpha = 0.5;
    let heads = [
        HeadKind::TwoStepAttention,
        HeadKind::SingleAttention,
        HeadKind::GlobalAverage,
        HeadKind::GlobalMax,
        HeadKind::WeightedRank(GwrpDecay { r: 0.6, per_class: None }),
    ];
    for head in heads {
        let cfg = ModelConfig { channel_widths: vec![2, 3], n_classes: 2, n_mels: 4, ..ModelConfig::desk(2) }
            .with_head(head.clone());
        let m = ModelParams::init(&cfg, 105).unwrap();
        let loss = |m: &ModelParams| {
            let (out, _) = m.forward_train(x.view(), true).unwrap();
            let recon = out.reconstruction.unwrap();
            let cfg = LossConfig::new(alpha).unwrap();
            mtl_loss(out.predictions.view(), y.view(), Some((recon.view(), x.view())), &cfg).unwrap().total
        };
        let (out, trace) = m.forward_train(x.view(), true).unwrap();
        let d_probs = bce_grad(out.predictions.view(), y.view()).unwrap();
        let d_recon = mse_grad(out.reconstruction.as_ref().unwrap().view(), x.view()).unwrap() * alpha;
        let g = m.backward(&trace, d_probs.view(), Some(d_recon.view())).unwrap();
        model_worst.push((format!("model/{}", head.name()), param_error(&m, &g, model_tensors, loss)));
    }
    for (name, e) in &model_worst {
        ensure(*e <= MODEL_GRAD_TOL, format!("{name}: relative error {e:e} > {MODEL_GRAD_TOL:e}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < GRAD_BUDGET, format!("took {elapsed:?}"))?;
    let pw = pool_worst.iter().map(|p| p.1).fold(0.0, f64::max);
    let mw = model_worst.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(format!("pooling max {pw:.1e}, losses and model max {mw:.1e}, {elapsed:.1?}"))
}

fn c5_metrics() -> Outcome {
    let mut r = rng(105);
    let mut worst: f64 = 0.0;
    for i in 0..METRIC_BATCHES {
        let (n, k) = (r.random_range(1..=20), r.random_range(1..=5));
        let coarse = i % 2 == 0;
        let scores = Array2::from_shape_simple_fn((n, k), || {
            let s: f64 = r.random_range(0.0..=1.0);
            if coarse { (s * 10.0).round() / 10.0 } else { s }
        });
        let labels = Array2::from_shape_simple_fn((n, k), || r.random_bool(0.4) as u8);
        let (micro, macro_p, auc) = brute_metrics(&scores, &labels, 0.5);
        let report = evaluate(&EvalBatch::new(scores, labels).unwrap(), 0.5, &[]).map_err(|e| e.to_string())?;
        worst = worst.max((report.micro_precision - micro).abs()).max((report.macro_precision - macro_p).abs());
        match (report.auc, auc) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            other => return Err(format!("batch {i}: AUC availability differs {other:?}")),
        }
    }
    ensure(worst <= METRIC_TOL, format!("max deviation {worst:e}"))?;
    let auc = roc_auc(
        Array1::from(vec![0.1, 0.4, 0.35, 0.8]).view(),
        Array1::from(vec![0u8, 0, 1, 1]).view(),
    )
    .map_err(|e| e.to_string())?;
    ensure((auc - 0.75).abs() <= METRIC_TOL, format!("worked AUC example gave {auc}"))?;
    Ok(format!("{METRIC_BATCHES} batches, max deviation {worst:.1e}; worked AUC example = {auc}"))
}

fn c6_mixing() -> Outcome {
    const SR: u32 = 32_000;
    let kinds = EventKind::separable_classes(5, SR);
    let mut worst: f64 = 0.0;
    for snr in [0.0, 10.0, 20.0] {
        for i in 0..CLIPS_PER_SNR {
            let seed = 5000 + i as u64;
            let mut r = rng(seed);
            let class = r.random_range(0..kinds.len());
            let len = r.random_range(SR as usize / 2..=2 * SR as usize);
            let event = AudioClip::new(kinds[class].render(len, SR, &mut r), SR).unwrap();
            let bg = AudioClip::new(BackgroundKind::Pink.render(10 * SR as usize, 0.05, &mut r), SR).unwrap();
            let (mixed, rec) = mix_clip(&bg, &[(class, event)], snr, seed, 5).map_err(|e| e.to_string())?;
            let p = &rec.placements[0];
            let span = p.start_sample..p.start_sample + p.duration_samples;
            let b: Vec<f64> = bg.samples()[span.clone()].iter().map(|v| v * rec.normalization_gain).collect();
            let e: Vec<f64> = mixed.samples()[span].iter().zip(&b).map(|(m, b)| m - b).collect();
            let power = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
            worst = worst.max((10.0 * (power(&e) / power(&b)).log10() - snr).abs());
            ensure(
                rec.weak_label.iter().enumerate().all(|(k, &v)| (v == 1) == (k == class)),
                format!("clip {i}: weak label {:?} for class {class}", rec.weak_label),
            )?;
        }
    }
    ensure(worst <= SNR_TOL_DB, format!("worst SNR deviation {worst:.3} dB"))?;

    let mut cfg = CorpusConfig::toy(4, 20, vec![0.0, 10.0, 20.0], 106);
    cfg.clip_seconds = 2.0;
    cfg.event_seconds = [0.2, 0.5];
    let corpus = generate_toy_corpus(&cfg).map_err(|e| e.to_string())?;
    for rec in &corpus.manifest.records {
        let ps = &rec.placements;
        for (i, a) in ps.iter().enumerate() {
            ensure(ps[i + 1..].iter().all(|b| !a.overlaps(b)), format!("{}: overlapping placements", rec.clip_id))?;
        }
        let mut label = vec![0u8; 4];
        ps.iter().for_each(|p| label[p.class_index] = 1);
        ensure(label == rec.weak_label, format!("{}: weak label disagrees with placements", rec.clip_id))?;
    }
    Ok(format!("{CLIPS_PER_SNR} clips per SNR, worst deviation {worst:.3} dB; multi-event corpus consistent"))
}

fn c7_shape() -> Outcome {
    let cfg = FeatureConfig::default();
    let x = BackgroundKind::White.render(10 * 32_000, 0.1, &mut rng(107));
    let spec = log_mel(&AudioClip::new(x, 32_000).unwrap(), &cfg).map_err(|e| e.to_string())?;
    let fb = mel_filterbank(&cfg).map_err(|e| e.to_string())?;
    ensure(spec.values.dim() == (311, 64), format!("got {:?}", spec.values.dim()))?;
    ensure(fb.dim() == (64, 1025), format!("filterbank {:?}", fb.dim()))?;
    Ok(format!(
        "window {} hop {} {} mels: {:?}",
        cfg.window_size,
        cfg.hop,
        cfg.n_mels,
        spec.values.dim()
    ))
}

fn toy_features() -> FeatureSet {
    let corpus = generate_toy_corpus(&CorpusConfig::toy(3, 120, vec![20.0], TOY_SEED)).unwrap();
    FeatureSet::from_corpus(&corpus, &FeatureConfig::with_mels(32), None).unwrap()
}

fn toy_train(features: &FeatureSet, head: HeadKind) -> (Checkpoint, f64, Duration) {
    let start = Instant::now();
    let train = TrainConfig { max_epochs: TOY_EPOCHS, seed: TOY_SEED, ..TrainConfig::default() };
    let model = ModelConfig::desk(3).with_head(head);
    let outcome = train_fold(features, &model, &train, &LossConfig::new(0.0).unwrap()).unwrap();
    let best = outcome.history.best_auc().unwrap_or(f64::NAN);
    (outcome.checkpoint, best, start.elapsed())
}

fn c8_toy_run(features: &FeatureSet, ckpt_out: &mut Option<Checkpoint>) -> (Outcome, Option<String>) {
    let (ckpt, auc_2ap, elapsed) = toy_train(features, HeadKind::TwoStepAttention);
    *ckpt_out = Some(ckpt);
    let (_, auc_gmp, gmp_elapsed) = toy_train(features, HeadKind::GlobalMax);
    let warning = (auc_gmp > auc_2ap + GMP_MARGIN)
        .then(|| format!("gmp AUC {auc_gmp:.3} exceeds 2ap {auc_2ap:.3} by more than {GMP_MARGIN}"));
    let outcome = ensure(auc_2ap >= TOY_MIN_AUC, format!("2ap best validation AUC {auc_2ap:.3} < {TOY_MIN_AUC}"))
        .and_then(|_| ensure(elapsed <= TOY_BUDGET, format!("2ap run took {elapsed:?}")))
        .map(|_| {
            format!(
                "2ap best AUC {auc_2ap:.3} in {elapsed:.0?}; gmp {auc_gmp:.3} in {gmp_elapsed:.0?}"
            )
        });
    (outcome, warning)
}

fn c9_ablation(out: &Path) -> Outcome {
    let corpus = generate_toy_corpus(&CorpusConfig::toy(3, 20, vec![0.0, 10.0, 20.0], 109)).unwrap();
    let features = FeatureSet::from_corpus(&corpus, &FeatureConfig::with_mels(32), None).unwrap();
    let cfg = AblationConfig { alphas: ABLATION_ALPHAS.to_vec(), heads: vec![HeadKind::TwoStepAttention], folds: Some(vec![0]) };
    let train = TrainConfig { max_epochs: ABLATION_EPOCHS, seed: 109, ..TrainConfig::default() };
    let (report, cells) =
        run_ablation(&features, &ModelConfig::desk(3), &train, &cfg, Some(out), |_, _| {}).map_err(|e| e.to_string())?;

    ensure(report.failures.is_empty(), format!("failed cells: {:?}", report.failures))?;
    ensure(report.snr_levels == vec![0.0, 10.0, 20.0], format!("SNR columns {:?}", report.snr_levels))?;
    ensure(report.rows.len() == ABLATION_ALPHAS.len(), "one row per alpha")?;
    for row in &report.rows {
        ensure(row.per_snr.len() == 3, format!("alpha {}: {} SNR columns", row.alpha, row.per_snr.len()))?;
    }
    let table = report.to_markdown();
    ensure(table.lines().count() == 2 + ABLATION_ALPHAS.len(), format!("table shape:\n{table}"))?;
    for f in ["table.md", "table.csv", "report.json", "cells.json"] {
        ensure(out.join(f).is_file(), format!("{f} missing"))?;
    }

    let cell = |alpha: f64| cells.iter().find(|c| c.alpha == alpha).map(|c| &c.outcome);
    let (Some(CellOutcome::Completed { final_val_l2: l2_off, decoder_unchanged: frozen, .. }),
         Some(CellOutcome::Completed { final_val_l2: l2_on, .. })) = (cell(0.0), cell(0.001))
    else {
        return Err("missing alpha 0 or 0.001 cell".into());
    };
    ensure(*frozen, "decoder changed during the alpha = 0 run")?;
    ensure(l2_on < l2_off, format!("reconstruction MSE {l2_on:.4} at 0.001 is not below {l2_off:.4} at 0"))?;
    Ok(format!("3 rows x 3 SNRs; val MSE {l2_off:.3} at alpha 0 vs {l2_on:.3} at 0.001; decoder frozen at alpha 0"))
}

fn c10_visualization(features: &FeatureSet, ckpt: &Checkpoint, out: &Path) -> Outcome {
    let (_, val) = features.split(ckpt.fold).map_err(|e| e.to_string())?;
    let clip = *val
        .iter()
        .find(|&&i| features.labels.row(i).iter().any(|&v| v == 1))
        .ok_or("no positive validation clip")?;
    let (x, _) = features.batch(&[clip], &ckpt.standardizer).map_err(|e| e.to_string())?;
    let input = x.index_axis(Axis(0), 0);
    let vis = viz::visualize(ckpt, input, out).map_err(|e| e.to_string())?;

    let pngs = std::fs::read_dir(out)
        .map_err(|e| e.to_string())?
        .filter(|e| e.as_ref().is_ok_and(|e| e.path().extension().is_some_and(|x| x == "png")))
        .count();
    ensure(pngs == viz::N_PANELS && vis.panels.len() == viz::N_PANELS, format!("{pngs} images written"))?;
    let expected = [
        (1, "input_logmel", false),
        (2, "reconstruction", false),
        (3, "step1_attention_rank1", true),
        (4, "step1_attention_rank2", true),
        (5, "step1_attention_rank3", true),
        (6, "step1_output", false),
        (7, "step2_attention", false),
        (8, "clip_probabilities", false),
    ];
    for (panel, (index, stem, per_class)) in vis.panels.iter().zip(expected) {
        let name = panel.path.file_name().unwrap().to_string_lossy();
        ensure(
            panel.index == index && name.contains(stem) && panel.class_index.is_some() == per_class,
            format!("panel {index} is {name}"),
        )?;
    }

    // Raw weights: the dump holds the forward pass rounded to f32, nothing binarized.
    let out_f = ckpt.model.forward(input.insert_axis(Axis(0)), false).map_err(|e| e.to_string())?;
    let maps = &out_f.attention[0];
    let records = read_matrix_records(&vis.dump).map_err(|e| e.to_string())?;
    let get = |name: &str| records.iter().find(|r| r.name == name).map(|r| &r.values);
    for c in 0..3 {
        let dumped = get(&format!("step1_weights/{c}")).ok_or("missing step1 weights")?;
        let live = maps.step1_weights.index_axis(Axis(0), c);
        ensure(dumped.iter().zip(live.iter()).all(|(&d, &l)| d == l as f32), "step1 weights differ from the model")?;
    }
    let dumped2 = get("step2_weights").ok_or("missing step2 weights")?;
    ensure(
        dumped2.iter().zip(maps.step2_weights.iter()).all(|(&d, &l)| d == l as f32),
        "step2 weights differ from the model",
    )?;
    let fractional = dumped2.iter().filter(|&&v| v > 0.0 && v < 1.0).count();
    ensure(fractional == dumped2.len(), "step2 weights look thresholded")?;

    let probs = out_f.predictions.row(0).to_vec();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap());
    ensure(vis.top_classes == order[..3], format!("top classes {:?} vs argmax {:?}", vis.top_classes, &order[..3]))?;
    Ok(format!("8 panels for {}, top classes {:?}", features.clip_ids[clip], vis.top_classes))
}

fn report(n: usize, name: &str, outcome: &Outcome) -> bool {
    match outcome {
        Ok(detail) => println!("[PASS] {n:>2} {name}: {detail}"),
        Err(detail) => println!("[FAIL] {n:>2} {name}: {detail}"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temporary directory");
    let mut ok = true;
    ok &= report(1, "pooling oracle equivalence", &c1_oracles());
    ok &= report(2, "GWRP limits", &c2_gwrp_limits());
    ok &= report(3, "normalization and boundedness", &c3_normalization());
    ok &= report(4, "gradient checks", &c4_gradients());
    ok &= report(5, "metric oracles", &c5_metrics());
    ok &= report(6, "mixing fidelity", &c6_mixing());
    ok &= report(7, "feature shape", &c7_shape());

    let features = toy_features();
    let mut ckpt = None;
    let (c8, warning) = c8_toy_run(&features, &mut ckpt);
    ok &= report(8, "end-to-end toy run", &c8);
    if let Some(w) = warning {
        println!("[WARN]  8 head ordering: {w}");
    }
    ok &= report(9, "ablation structure", &c9_ablation(&work.path().join("ablation")));
    let c10 = match &ckpt {
        Some(c) => c10_visualization(&features, c, &work.path().join("visualize")),
        None => Err("no toy checkpoint".into()),
    };
    ok &= report(10, "visualization", &c10);

    if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
