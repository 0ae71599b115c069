use std::path::Path;

use ndarray::{Array2, Array3};

use crate::datamix::{Corpus, DatasetManifest};
use crate::error::{Error, Result};
use crate::features::{
    config_hash, read_matrix_records, write_matrix_records, FeatureConfig, LogMelExtractor,
    LogMelSpectrogram, MatrixRecord, Standardizer,
};

/// Environment variable naming a directory for cached log-mel features.
pub const CACHE_DIR_ENV: &str = "WEAKSED_CACHE_DIR";

/// Log-mel features and weak labels for every clip of a corpus.
///
/// Features are held at single precision (rounded through `f32`) whether
/// they were just extracted or read back from the cache, so results do not
/// depend on cache state.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub config: FeatureConfig,
    pub clip_ids: Vec<String>,
    pub specs: Vec<LogMelSpectrogram>,
    /// `N x K` weak labels.
    pub labels: Array2<u8>,
    pub folds: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub n_folds: usize,
    /// Hash of the manifest and feature settings the set was built from.
    pub source_hash: u64,
}

impl FeatureSet {
    pub fn from_corpus(corpus: &Corpus, config: &FeatureConfig, cache_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let manifest = &corpus.manifest;
        manifest.validate()?;
        if manifest.sample_rate != config.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "corpus is sampled at {} Hz but features expect {} Hz",
                manifest.sample_rate, config.sample_rate
            )));
        }
        if corpus.clips.len() != manifest.records.len() {
            return Err(Error::InvalidInput("corpus audio and manifest disagree in length".into()));
        }
        let source_hash = config_hash(&(config, manifest));
        let cache_path = cache_dir.map(|d| d.join(format!("features-{source_hash:016x}.bin")));
        let cached = match &cache_path {
            Some(p) if p.exists() => read_matrix_records(p).ok().filter(|recs| {
                recs.len() == manifest.records.len()
                    && recs
                        .iter()
                        .zip(&manifest.records)
                        .all(|(r, m)| r.name == m.clip_id && r.config_hash == source_hash)
            }),
            _ => None,
        };
        let specs: Vec<LogMelSpectrogram> = match cached {
            Some(recs) => recs
                .into_iter()
                .map(|r| LogMelSpectrogram { values: r.values.mapv(f64::from) })
                .collect(),
            None => {
                let extractor = LogMelExtractor::new(config)?;
                let specs = corpus
                    .clips
                    .iter()
                    .map(|c| {
                        extractor.extract(c).map(|s| LogMelSpectrogram {
                            values: s.values.mapv(|v| f64::from(v as f32)),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                if let Some(p) = &cache_path {
                    std::fs::create_dir_all(p.parent().expect("cache file has a parent"))?;
                    let recs: Vec<MatrixRecord> = specs
                        .iter()
                        .zip(&manifest.records)
                        .map(|(s, r)| MatrixRecord::from_f64(r.clip_id.clone(), source_hash, &s.values))
                        .collect();
                    write_matrix_records(p, &recs)?;
                }
                specs
            }
        };
        Self::assemble(manifest, config.clone(), specs, source_hash)
    }

    fn assemble(
        manifest: &DatasetManifest,
        config: FeatureConfig,
        specs: Vec<LogMelSpectrogram>,
        source_hash: u64,
    ) -> Result<Self> {
        let k = manifest.n_classes;
        let n = manifest.records.len();
        let mut labels = Array2::zeros((n, k));
        for (i, r) in manifest.records.iter().enumerate() {
            for (j, &l) in r.weak_label.iter().enumerate() {
                labels[[i, j]] = l;
            }
        }
        Ok(Self {
            config,
            clip_ids: manifest.records.iter().map(|r| r.clip_id.clone()).collect(),
            specs,
            labels,
            folds: manifest.records.iter().map(|r| r.fold).collect(),
            snr_db: manifest.records.iter().map(|r| r.snr_db).collect(),
            n_folds: manifest.n_folds,
            source_hash,
        })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.ncols()
    }

    pub fn n_mels(&self) -> usize {
        self.config.n_mels
    }

    pub fn index_of(&self, clip_id: &str) -> Option<usize> {
        self.clip_ids.iter().position(|c| c == clip_id)
    }

    /// Clip indices outside and inside `fold`.
    pub fn split(&self, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if fold >= self.n_folds {
            return Err(Error::InvalidConfig(format!(
                "fold {fold} does not exist; the corpus has {} folds",
                self.n_folds
            )));
        }
        let (val, train): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&i| self.folds[i] == fold);
        if train.is_empty() {
            return Err(Error::InvalidConfig(format!("no training clips outside fold {fold}")));
        }
        Ok((train, val))
    }

    pub fn fit_standardizer(&self, indices: &[usize]) -> Result<Standardizer> {
        Standardizer::fit(indices.iter().map(|&i| &self.specs[i]))
    }

    /// Standardized inputs `B x T x F` and float targets `B x K`.
    pub fn batch(&self, indices: &[usize], standardizer: &Standardizer) -> Result<(Array3<f64>, Array2<f64>)> {
        let first = indices
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (t, f) = self.specs[*first].values.dim();
        let mut x = Array3::zeros((indices.len(), t, f));
        let mut y = Array2::zeros((indices.len(), self.n_classes()));
        for (b, &i) in indices.iter().enumerate() {
            if self.specs[i].values.dim() != (t, f) {
                return Err(Error::InvalidInput(format!(
                    "clip {} has {:?} frames x bins, expected {:?}; clips in a batch must share a length",
                    self.clip_ids[i],
                    self.specs[i].values.dim(),
                    (t, f)
                )));
            }
            x.index_axis_mut(ndarray::Axis(0), b).assign(&standardizer.apply(&self.specs[i])?);
            y.row_mut(b).assign(&self.labels.row(i).mapv(f64::from));
        }
        Ok((x, y))
    }
}
