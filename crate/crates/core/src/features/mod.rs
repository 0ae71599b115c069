//! Log-mel spectrogram front end.
//!
//! Frames are taken without padding, so a clip of `L` samples yields
//! `floor((L - window) / hop) + 1` frames. Each frame is Hann-windowed, its
//! power spectrum is projected onto triangular mel filters and the result
//! is floored at `log_floor` before the natural log.

mod cache;
mod standardize;

pub use cache::{config_hash, read_matrix_records, write_matrix_records, MatrixRecord};
pub use standardize::Standardizer;

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    #[serde(default = "default_window")]
    pub window_size: usize,
    #[serde(default = "default_hop")]
    pub hop: usize,
    #[serde(default = "default_mels")]
    pub n_mels: usize,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    #[serde(default)]
    pub fmin: f64,
    /// Upper edge of the filterbank; `None` means Nyquist.
    #[serde(default)]
    pub fmax: Option<f64>,
    #[serde(default = "default_floor")]
    pub log_floor: f64,
}

fn default_window() -> usize {
    2048
}
fn default_hop() -> usize {
    1024
}
fn default_mels() -> usize {
    64
}
fn default_rate() -> u32 {
    DEFAULT_SAMPLE_RATE
}
fn default_floor() -> f64 {
    1e-10
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_size: default_window(),
            hop: default_hop(),
            n_mels: default_mels(),
            sample_rate: default_rate(),
            fmin: 0.0,
            fmax: None,
            log_floor: default_floor(),
        }
    }
}

impl FeatureConfig {
    pub fn with_mels(n_mels: usize) -> Self {
        Self {
            n_mels,
            ..Self::default()
        }
    }

    pub fn fmax(&self) -> f64 {
        self.fmax.unwrap_or(f64::from(self.sample_rate) / 2.0)
    }

    pub fn n_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.window_size < 2 || self.hop == 0 || self.hop > self.window_size {
            return bad(format!(
                "need 0 < hop <= window_size, got hop {} window {}",
                self.hop, self.window_size
            ));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax() && self.fmax() <= nyquist) {
            return bad(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got [{}, {}]",
                self.fmin,
                self.fmax()
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log floor must be positive".into());
        }
        Ok(())
    }

    /// Frames produced for a clip of `len` samples, or 0 if it is shorter
    /// than one window.
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.window_size {
            0
        } else {
            (len - self.window_size) / self.hop + 1
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequencies in Hz of the `n_mels` filters; the two band edges
/// are not included.
pub fn filter_centers(config: &FeatureConfig) -> Vec<f64> {
    mel_points(config)[1..=config.n_mels].to_vec()
}

fn mel_points(config: &FeatureConfig) -> Vec<f64> {
    let lo = hz_to_mel(config.fmin);
    let hi = hz_to_mel(config.fmax());
    let n = config.n_mels + 1;
    (0..=n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
        .collect()
}

/// Triangular filters, `n_mels x (window/2 + 1)`, each peaking at 1 on its
/// centre frequency.
pub fn mel_filterbank(config: &FeatureConfig) -> Result<Array2<f64>> {
    config.validate()?;
    let points = mel_points(config);
    let bin_hz = f64::from(config.sample_rate) / config.window_size as f64;
    let centre_bins: Vec<i64> = points[1..=config.n_mels]
        .iter()
        .map(|f| (f / bin_hz).round() as i64)
        .collect();
    if centre_bins.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!(
            "{} mel bands are too many for a {}-point FFT: filter centres collide",
            config.n_mels, config.window_size
        )));
    }
    let mut bank = Array2::zeros((config.n_mels, config.n_bins()));
    for m in 0..config.n_mels {
        let (lo, centre, hi) = (points[m], points[m + 1], points[m + 2]);
        for (b, w) in bank.row_mut(m).iter_mut().enumerate() {
            let f = b as f64 * bin_hz;
            let rising = (f - lo) / (centre - lo);
            let falling = (hi - f) / (hi - centre);
            *w = rising.min(falling).max(0.0);
        }
    }
    Ok(bank)
}

/// A `T x F` log-mel matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMelSpectrogram {
    pub values: Array2<f64>,
}

impl LogMelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }
}

/// Reusable extractor holding the filterbank, window and FFT plan.
pub struct LogMelExtractor {
    config: FeatureConfig,
    bank: Array2<f64>,
    window: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl LogMelExtractor {
    pub fn new(config: &FeatureConfig) -> Result<Self> {
        let bank = mel_filterbank(config)?;
        let n = config.window_size;
        // Periodic Hann.
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            config: config.clone(),
            bank,
            window,
            fft,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Array2<f64> {
        &self.bank
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<LogMelSpectrogram> {
        let cfg = &self.config;
        if clip.sample_rate() != cfg.sample_rate {
            return Err(Error::InvalidInput(format!(
                "clip sample rate {} does not match feature sample rate {}",
                clip.sample_rate(),
                cfg.sample_rate
            )));
        }
        let n_frames = cfg.n_frames(clip.len());
        if n_frames == 0 {
            return Err(Error::InvalidInput(format!(
                "clip of {} samples is shorter than one {}-sample window",
                clip.len(),
                cfg.window_size
            )));
        }
        let n_bins = cfg.n_bins();
        let mut power = Array2::<f64>::zeros((n_frames, n_bins));
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.window_size];
        let samples = clip.samples();
        for (t, mut row) in power.axis_iter_mut(Axis(0)).enumerate() {
            let frame = &samples[t * cfg.hop..t * cfg.hop + cfg.window_size];
            for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex::new(s * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in row.iter_mut().zip(&buf[..n_bins]) {
                *p = c.norm_sqr();
            }
        }
        let floor = cfg.log_floor;
        let values = power.dot(&self.bank.t()).mapv(|v| v.max(floor).ln());
        Ok(LogMelSpectrogram { values })
    }
}

/// One-shot convenience over [`LogMelExtractor`].
pub fn log_mel(clip: &AudioClip, config: &FeatureConfig) -> Result<LogMelSpectrogram> {
    LogMelExtractor::new(config)?.extract(clip)
}

/// Per-bin mean over time, handy for quick spectral checks.
pub fn time_average(spec: &LogMelSpectrogram) -> Array1<f64> {
    spec.values.mean_axis(Axis(0)).expect("spectrogram has at least one frame")
}
