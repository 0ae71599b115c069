use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{BackgroundKind, EventKind};
use super::{make_folds, mix_clip, DatasetManifest, MixRecord, MANIFEST_SCHEMA_VERSION};
use crate::audio::{AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundConfig {
    pub kind: BackgroundKind,
    /// Root-mean-square amplitude of the rendered background.
    pub rms: f64,
}

/// Everything needed to regenerate a synthetic corpus bit-for-bit.
///
/// `background` has no default: a corpus description without one is
/// rejected at parse time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_classes: usize,
    /// Number of clips rendered at each SNR level.
    pub clips_per_snr: usize,
    pub snr_levels: Vec<f64>,
    #[serde(default = "default_folds")]
    pub n_folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_clip_seconds")]
    pub clip_seconds: f64,
    /// Inclusive range of event durations in seconds.
    #[serde(default = "default_event_seconds")]
    pub event_seconds: [f64; 2],
    /// Inclusive range of the number of events per clip.
    #[serde(default = "default_events_per_clip")]
    pub events_per_clip: [usize; 2],
    pub background: BackgroundConfig,
    /// Per-class generators. Filled with [`EventKind::separable_classes`]
    /// when omitted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<EventKind>,
}

fn default_folds() -> usize {
    4
}
fn default_sample_rate() -> u32 {
    DEFAULT_SAMPLE_RATE
}
fn default_clip_seconds() -> f64 {
    4.0
}
fn default_event_seconds() -> [f64; 2] {
    [0.5, 1.0]
}
fn default_events_per_clip() -> [usize; 2] {
    [1, 2]
}

impl CorpusConfig {
    /// Desk-scale corpus: separable tone/chirp/noise-burst classes over pink
    /// noise, 4 s clips. Each clip holds between 0 and `min(K, 3)` events;
    /// the background is quiet enough that no clip needs peak normalization
    /// at 20 dB, so overall loudness carries no label information.
    pub fn toy(n_classes: usize, clips_per_snr: usize, snr_levels: Vec<f64>, seed: u64) -> Self {
        Self {
            n_classes,
            clips_per_snr,
            snr_levels,
            n_folds: default_folds(),
            seed,
            sample_rate: DEFAULT_SAMPLE_RATE,
            clip_seconds: default_clip_seconds(),
            event_seconds: default_event_seconds(),
            events_per_clip: [0, n_classes.min(3)],
            background: BackgroundConfig {
                kind: BackgroundKind::Pink,
                rms: 0.01,
            },
            classes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.clips_per_snr == 0 || self.snr_levels.is_empty() {
            return bad("corpus must contain at least one clip".into());
        }
        if self.snr_levels.iter().any(|s| !s.is_finite()) {
            return bad("SNR levels must be finite".into());
        }
        if self.sample_rate == 0 || !(self.clip_seconds > 0.0) {
            return bad("sample rate and clip length must be positive".into());
        }
        let [lo, hi] = self.event_seconds;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("invalid event duration range [{lo}, {hi}]"));
        }
        let [emin, emax] = self.events_per_clip;
        if emin > emax || emax > self.n_classes {
            return bad(format!(
                "events per clip must satisfy min <= max <= n_classes, got [{emin}, {emax}]"
            ));
        }
        if hi * emax as f64 > self.clip_seconds {
            return bad(format!(
                "{emax} events of up to {hi} s do not fit in a {} s clip",
                self.clip_seconds
            ));
        }
        if !(self.background.rms > 0.0) {
            return bad("background rms must be positive".into());
        }
        if !self.classes.is_empty() && self.classes.len() != self.n_classes {
            return bad(format!(
                "{} class generators given for {} classes",
                self.classes.len(),
                self.n_classes
            ));
        }
        Ok(())
    }

    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds * f64::from(self.sample_rate)).round() as usize
    }

    /// Copy with the per-class generators filled in; this is the form echoed
    /// into a generated manifest.
    pub fn with_generators(&self) -> CorpusConfig {
        CorpusConfig { classes: self.class_generators(), ..self.clone() }
    }

    fn class_generators(&self) -> Vec<EventKind> {
        if self.classes.is_empty() {
            EventKind::separable_classes(self.n_classes, self.sample_rate)
        } else {
            self.classes.clone()
        }
    }

    /// Regenerates one clip and its components from its record. Only the
    /// record's `seed`, `snr_db` and `clip_id` are consulted.
    pub fn render_record(&self, record: &MixRecord) -> Result<RenderedClip> {
        self.render(&record.clip_id, record.snr_db, record.seed, &self.class_generators())
    }

    fn render(
        &self,
        clip_id: &str,
        snr_db: f64,
        clip_seed: u64,
        generators: &[EventKind],
    ) -> Result<RenderedClip> {
        let mut rng = ChaCha8Rng::seed_from_u64(clip_seed);
        let sr = self.sample_rate;
        let [emin, emax] = self.events_per_clip;
        let n_events = rng.random_range(emin..=emax);
        let mut classes = rand::seq::index::sample(&mut rng, self.n_classes, n_events).into_vec();
        classes.sort_unstable();
        let [dmin, dmax] = self.event_seconds;
        let mut events = Vec::with_capacity(n_events);
        for &k in &classes {
            let secs = if dmax > dmin {
                rng.random_range(dmin..=dmax)
            } else {
                dmin
            };
            let len = ((secs * f64::from(sr)).round() as usize).max(1);
            events.push((k, AudioClip::new(generators[k].render(len, sr, &mut rng), sr)?));
        }
        let bg_samples = self
            .background
            .kind
            .render(self.clip_samples(), self.background.rms, &mut rng);
        let background = AudioClip::new(bg_samples, sr)?;
        let mix_seed = rng.random::<u64>();
        let (mixed, mut record) = mix_clip(&background, &events, snr_db, mix_seed, self.n_classes)?;
        record.clip_id = clip_id.to_string();
        record.seed = clip_seed;
        Ok(RenderedClip {
            background,
            events,
            mixed,
            record,
        })
    }
}

/// A clip together with the components it was mixed from.
#[derive(Debug, Clone)]
pub struct RenderedClip {
    pub background: AudioClip,
    pub events: Vec<(usize, AudioClip)>,
    pub mixed: AudioClip,
    pub record: MixRecord,
}

/// An in-memory corpus: manifest plus one mixed waveform per record, in
/// record order.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub clips: Vec<AudioClip>,
}

/// Renders a deterministic synthetic corpus and assigns folds.
pub fn generate_toy_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let generators = config.class_generators();
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::new();
    let mut clips = Vec::new();
    for &snr in &config.snr_levels {
        for _ in 0..config.clips_per_snr {
            let clip_id = format!("clip{:05}", records.len());
            let rendered = config.render(&clip_id, snr, seeds.random::<u64>(), &generators)?;
            records.push(rendered.record);
            clips.push(rendered.mixed);
        }
    }
    let stored = config.with_generators();
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        records,
        n_classes: config.n_classes,
        n_folds: 1,
        snr_levels: config.snr_levels.clone(),
        sample_rate: config.sample_rate,
        generator: Some(stored),
    };
    let manifest = make_folds(&manifest, config.n_folds, config.seed)?;
    Ok(Corpus { manifest, clips })
}

/// Writes `manifest.json` and `audio/<clip_id>.wav` under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio)?;
    for (record, clip) in corpus.manifest.records.iter().zip(&corpus.clips) {
        clip.write_wav(audio.join(format!("{}.wav", record.clip_id)))?;
    }
    corpus.manifest.save(dir.join("manifest.json"))
}

impl Corpus {
    /// Loads a corpus written by [`write_corpus`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Corpus> {
        let dir = dir.as_ref();
        let manifest = DatasetManifest::load(dir.join("manifest.json"))?;
        let clips = manifest
            .records
            .iter()
            .map(|r| AudioClip::read_wav(dir.join("audio").join(format!("{}.wav", r.clip_id))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus { manifest, clips })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        let mut c = CorpusConfig::toy(3, 12, vec![20.0], 7);
        c.clip_seconds = 1.0;
        c.event_seconds = [0.1, 0.3];
        c
    }

    #[test]
    fn deterministic_manifest() {
        let a = generate_toy_corpus(&small()).unwrap();
        let b = generate_toy_corpus(&small()).unwrap();
        assert_eq!(a.manifest.to_json().unwrap(), b.manifest.to_json().unwrap());
        assert_eq!(a.clips, b.clips);
    }

    #[test]
    fn folds_are_balanced() {
        let corpus = generate_toy_corpus(&small()).unwrap();
        assert_eq!(corpus.manifest.fold_sizes(), vec![3, 3, 3, 3]);
        corpus.manifest.validate().unwrap();
    }

    #[test]
    fn render_record_reproduces_clip() {
        let cfg = small();
        let corpus = generate_toy_corpus(&cfg).unwrap();
        for (record, clip) in corpus.manifest.records.iter().zip(&corpus.clips) {
            let again = cfg.render_record(record).unwrap();
            assert_eq!(&again.mixed, clip);
            assert_eq!(again.record.placements, record.placements);
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = small();
        c.n_classes = 1;
        c.events_per_clip = [1, 1];
        assert!(matches!(generate_toy_corpus(&c), Err(Error::InvalidConfig(_))));
        let mut c = small();
        c.clips_per_snr = 0;
        assert!(matches!(generate_toy_corpus(&c), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn missing_background_is_a_parse_error() {
        let text = "n_classes = 3\nclips_per_snr = 4\nsnr_levels = [20.0]\n";
        assert!(toml::from_str::<CorpusConfig>(text).is_err());
    }

    #[test]
    fn write_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_toy_corpus(&small()).unwrap();
        write_corpus(&corpus, dir.path()).unwrap();
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back.manifest, corpus.manifest);
        assert_eq!(back.clips.len(), corpus.clips.len());
    }
}
