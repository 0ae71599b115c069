//! Parametric stand-ins for real event and background recordings.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Relative frequency jitter applied to each rendered event instance.
const FREQ_JITTER: f64 = 0.03;
const FADE_SECS: f64 = 0.01;
const BURST_PARTIALS: usize = 24;

/// Sound class generator. Every instance is rendered with a small random
/// frequency jitter and random phase so no two events are identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Tone { freq_hz: f64 },
    Chirp { start_hz: f64, end_hz: f64 },
    NoiseBurst { low_hz: f64, high_hz: f64, modulation_hz: f64 },
}

impl EventKind {
    /// `n_classes` generators cycling through tone, chirp and noise burst,
    /// with centre frequencies log-spaced so the classes are spectrally
    /// separable.
    pub fn separable_classes(n_classes: usize, sample_rate: u32) -> Vec<EventKind> {
        let lo = 400.0f64;
        let hi = (f64::from(sample_rate) * 0.2).max(lo * 2.0);
        (0..n_classes)
            .map(|k| {
                let frac = if n_classes > 1 {
                    k as f64 / (n_classes - 1) as f64
                } else {
                    0.0
                };
                let centre = lo * (hi / lo).powf(frac);
                match k % 3 {
                    0 => EventKind::Tone { freq_hz: centre },
                    1 => EventKind::Chirp {
                        start_hz: centre / 1.15,
                        end_hz: centre * 1.15,
                    },
                    _ => EventKind::NoiseBurst {
                        low_hz: centre / 1.2,
                        high_hz: centre * 1.2,
                        modulation_hz: 6.0,
                    },
                }
            })
            .collect()
    }

    /// Renders `len` samples with unit peak amplitude envelope.
    pub fn render<R: Rng + ?Sized>(&self, len: usize, sample_rate: u32, rng: &mut R) -> Vec<f64> {
        let sr = f64::from(sample_rate);
        let jitter = 1.0 + rng.random_range(-FREQ_JITTER..=FREQ_JITTER);
        let phase0 = rng.random_range(0.0..2.0 * PI);
        let mut out: Vec<f64> = match *self {
            EventKind::Tone { freq_hz } => {
                let w = 2.0 * PI * freq_hz * jitter / sr;
                (0..len).map(|i| (w * i as f64 + phase0).sin()).collect()
            }
            EventKind::Chirp { start_hz, end_hz } => {
                let dur = len as f64 / sr;
                let (f0, f1) = (start_hz * jitter, end_hz * jitter);
                let rate = (f1 - f0) / dur.max(f64::EPSILON);
                (0..len)
                    .map(|i| {
                        let t = i as f64 / sr;
                        (2.0 * PI * (f0 * t + 0.5 * rate * t * t) + phase0).sin()
                    })
                    .collect()
            }
            EventKind::NoiseBurst {
                low_hz,
                high_hz,
                modulation_hz,
            } => {
                let partials: Vec<(f64, f64)> = (0..BURST_PARTIALS)
                    .map(|_| {
                        let f = rng.random_range(low_hz..=high_hz) * jitter;
                        (2.0 * PI * f / sr, rng.random_range(0.0..2.0 * PI))
                    })
                    .collect();
                let norm = 1.0 / (BURST_PARTIALS as f64).sqrt();
                let wm = 2.0 * PI * modulation_hz / sr;
                (0..len)
                    .map(|i| {
                        let x = i as f64;
                        let carrier: f64 = partials.iter().map(|(w, p)| (w * x + p).sin()).sum();
                        let envelope = 0.6 + 0.4 * (wm * x + phase0).sin();
                        norm * carrier * envelope
                    })
                    .collect()
            }
        };
        apply_fades(&mut out, (FADE_SECS * sr) as usize);
        out
    }
}

fn apply_fades(samples: &mut [f64], fade: usize) {
    let fade = fade.min(samples.len() / 2);
    let n = samples.len();
    for i in 0..fade {
        let g = 0.5 - 0.5 * (PI * i as f64 / fade as f64).cos();
        samples[i] *= g;
        samples[n - 1 - i] *= g;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    White,
    Pink,
    Brown,
}

impl BackgroundKind {
    /// Gaussian noise with the given spectral tilt, scaled to `rms`.
    pub fn render<R: Rng + ?Sized>(&self, len: usize, rms: f64, rng: &mut R) -> Vec<f64> {
        let mut white = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal));
        let mut out: Vec<f64> = match self {
            BackgroundKind::White => white.collect(),
            BackgroundKind::Pink => {
                // Paul Kellet's economy pink filter.
                let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
                white
                    .by_ref()
                    .map(|w| {
                        b0 = 0.99765 * b0 + w * 0.0990460;
                        b1 = 0.96300 * b1 + w * 0.2965164;
                        b2 = 0.57000 * b2 + w * 1.0526913;
                        b0 + b1 + b2 + w * 0.1848
                    })
                    .collect()
            }
            BackgroundKind::Brown => {
                let mut acc = 0.0;
                white
                    .by_ref()
                    .map(|w| {
                        acc = 0.995 * acc + 0.1 * w;
                        acc
                    })
                    .collect()
            }
        };
        let mean = out.iter().sum::<f64>() / len.max(1) as f64;
        out.iter_mut().for_each(|s| *s -= mean);
        let current = crate::audio::mean_power(&out).sqrt();
        if current > 0.0 {
            let scale = rms / current;
            out.iter_mut().for_each(|s| *s *= scale);
        }
        out
    }
}
