//! Weakly-labelled corpus synthesis: short events mixed into long
//! backgrounds at a controlled signal-to-noise ratio.
//!
//! SNR is measured as the mean-power ratio between the scaled event and the
//! stretch of background it overlays, not over the whole clip. Each clip
//! carries a weak label only: which classes occur, not where.

mod corpus;
mod synth;

pub use corpus::{
    generate_toy_corpus, write_corpus, BackgroundConfig, Corpus, CorpusConfig, RenderedClip,
};
pub use synth::{BackgroundKind, EventKind};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{mean_power, AudioClip};
use crate::error::{Error, Result};

/// Placement rejection sampling gives up after this many attempts.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Current manifest layout. Bump on any field change.
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPlacement {
    pub class_index: usize,
    pub start_sample: usize,
    pub duration_samples: usize,
    /// Amplitude scale applied to the event in the emitted clip, after any
    /// peak normalization.
    pub gain: f64,
}

impl EventPlacement {
    pub fn end_sample(&self) -> usize {
        self.start_sample + self.duration_samples
    }

    pub fn overlaps(&self, other: &EventPlacement) -> bool {
        self.start_sample < other.end_sample() && other.start_sample < self.end_sample()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRecord {
    pub clip_id: String,
    pub snr_db: f64,
    pub placements: Vec<EventPlacement>,
    pub weak_label: Vec<u8>,
    pub fold: usize,
    pub seed: u64,
    /// Whole-clip scale applied to avoid clipping; 1.0 when none was needed.
    pub normalization_gain: f64,
}

impl MixRecord {
    /// Weak label as floats, the form used as a training target.
    pub fn target(&self) -> Vec<f64> {
        self.weak_label.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub records: Vec<MixRecord>,
    pub n_classes: usize,
    pub n_folds: usize,
    pub snr_levels: Vec<f64>,
    /// Sample rate of every clip in the corpus.
    pub sample_rate: u32,
    /// Echo of the generator configuration, when the corpus is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<CorpusConfig>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "manifest schema version {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut ids = std::collections::HashSet::new();
        for r in &self.records {
            if !ids.insert(r.clip_id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate clip id {}", r.clip_id)));
            }
            if r.weak_label.len() != self.n_classes {
                return Err(Error::InvalidInput(format!(
                    "clip {} has a label of length {} for {} classes",
                    r.clip_id,
                    r.weak_label.len(),
                    self.n_classes
                )));
            }
            if r.fold >= self.n_folds {
                return Err(Error::InvalidInput(format!(
                    "clip {} assigned to fold {} of {}",
                    r.clip_id, r.fold, self.n_folds
                )));
            }
        }
        for fold in 0..self.n_folds {
            if !self.records.iter().any(|r| r.fold == fold) {
                return Err(Error::InvalidInput(format!("fold {fold} is empty")));
            }
        }
        Ok(())
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for r in &self.records {
            sizes[r.fold] += 1;
        }
        sizes
    }

    pub fn record(&self, clip_id: &str) -> Option<&MixRecord> {
        self.records.iter().find(|r| r.clip_id == clip_id)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Amplitude gain that puts `event` at `snr_db` above `background_segment`.
pub fn compute_gain(event: &AudioClip, background_segment: &AudioClip, snr_db: f64) -> Result<f64> {
    let p_event = event.mean_power();
    let p_background = background_segment.mean_power();
    if p_event <= 0.0 {
        return Err(Error::InvalidInput("event is silent, SNR is undefined".into()));
    }
    if p_background <= 0.0 {
        return Err(Error::InvalidInput(
            "background segment is silent, SNR is undefined".into(),
        ));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("snr_db must be finite, got {snr_db}")));
    }
    Ok((p_background / p_event * 10f64.powf(snr_db / 10.0)).sqrt())
}

/// Mixes `events` into `background` at uniformly random non-overlapping
/// offsets. The returned record has an empty clip id and fold 0; corpus
/// assembly fills both in.
pub fn mix_clip(
    background: &AudioClip,
    events: &[(usize, AudioClip)],
    snr_db: f64,
    seed: u64,
    n_classes: usize,
) -> Result<(AudioClip, MixRecord)> {
    let sample_rate = background.sample_rate();
    let total: usize = events.iter().map(|(_, e)| e.len()).sum();
    if total > background.len() {
        return Err(Error::InvalidInput(format!(
            "events span {total} samples but the background has only {}",
            background.len()
        )));
    }
    for (class_index, event) in events {
        if *class_index >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "event class {class_index} out of range for {n_classes} classes"
            )));
        }
        if event.sample_rate() != sample_rate {
            return Err(Error::InvalidInput(format!(
                "event sample rate {} differs from background {sample_rate}",
                event.sample_rate()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = place_events(background.len(), events, &mut rng)?;

    let mut mixed = background.samples().to_vec();
    let mut placements = Vec::with_capacity(events.len());
    for ((class_index, event), &start) in events.iter().zip(&starts) {
        let segment = background.segment(start, event.len())?;
        let gain = compute_gain(event, &segment, snr_db)?;
        for (out, &s) in mixed[start..start + event.len()].iter_mut().zip(event.samples()) {
            *out += gain * s;
        }
        placements.push(EventPlacement {
            class_index: *class_index,
            start_sample: start,
            duration_samples: event.len(),
            gain,
        });
    }

    let peak = mixed.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let normalization_gain = if peak > 1.0 {
        for s in &mut mixed {
            *s /= peak;
        }
        for p in &mut placements {
            p.gain /= peak;
        }
        1.0 / peak
    } else {
        1.0
    };

    let mut weak_label = vec![0u8; n_classes];
    for p in &placements {
        weak_label[p.class_index] = 1;
    }
    let record = MixRecord {
        clip_id: String::new(),
        snr_db,
        placements,
        weak_label,
        fold: 0,
        seed,
        normalization_gain,
    };
    Ok((AudioClip::new(mixed, sample_rate)?, record))
}

fn place_events(
    background_len: usize,
    events: &[(usize, AudioClip)],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if events.is_empty() {
        return Ok(Vec::new());
    }
    let mut starts = Vec::with_capacity(events.len());
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        starts.clear();
        for (_, event) in events {
            starts.push(rng.random_range(0..=background_len - event.len()));
        }
        let disjoint = (0..events.len()).all(|i| {
            (i + 1..events.len()).all(|j| {
                let (a0, a1) = (starts[i], starts[i] + events[i].1.len());
                let (b0, b1) = (starts[j], starts[j] + events[j].1.len());
                a1 <= b0 || b1 <= a0
            })
        });
        if disjoint {
            return Ok(starts);
        }
    }
    Err(Error::PlacementFailure {
        events: events.len(),
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

/// Re-measures the SNR of one placed event from an emitted clip, given the
/// background the clip was mixed from. The event contribution is recovered
/// as `mixed - normalization_gain * background` over the event support.
pub fn measure_snr(
    mixed: &AudioClip,
    background: &AudioClip,
    placement: &EventPlacement,
    normalization_gain: f64,
) -> Result<f64> {
    let range = placement.start_sample..placement.end_sample();
    if range.end > mixed.len() || range.end > background.len() {
        return Err(Error::InvalidArgument("placement exceeds clip length".into()));
    }
    let bg: Vec<f64> = background.samples()[range.clone()]
        .iter()
        .map(|s| s * normalization_gain)
        .collect();
    let residual: Vec<f64> = mixed.samples()[range]
        .iter()
        .zip(&bg)
        .map(|(m, b)| m - b)
        .collect();
    let p_bg = mean_power(&bg);
    if p_bg <= 0.0 {
        return Err(Error::InvalidInput("background segment is silent".into()));
    }
    Ok(10.0 * (mean_power(&residual) / p_bg).log10())
}

/// Reassigns folds: a seeded shuffle followed by round-robin dealing, so
/// fold sizes differ by at most one.
pub fn make_folds(manifest: &DatasetManifest, n_folds: usize, seed: u64) -> Result<DatasetManifest> {
    if n_folds < 2 || n_folds > manifest.records.len() {
        return Err(Error::InvalidConfig(format!(
            "n_folds must be in [2, {}], got {n_folds}",
            manifest.records.len()
        )));
    }
    let mut order: Vec<usize> = (0..manifest.records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut out = manifest.clone();
    out.n_folds = n_folds;
    for (position, &index) in order.iter().enumerate() {
        out.records[index].fold = position % n_folds;
    }
    Ok(out)
}
