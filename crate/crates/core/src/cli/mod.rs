//! Command line runner: `mix`, `extract`, `train`, `evaluate`, `ablate`
//! and `visualize`.
//!
//! Every command reads an [`ExperimentConfig`], writes its artifacts under
//! the output directory and leaves a `<command>.json` provenance record that
//! carries the config hash. Exit codes: 0 on success, 2 for configuration
//! or argument errors, 3 for runtime failures.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use config::{ExperimentConfig, MetricsConfig};

use crate::datamix::{generate_toy_corpus, write_corpus, Corpus};
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::pooling::HeadKind;
use crate::training::{
    evaluate_checkpoint, run_ablation, train_fold_with, FeatureSet, LossConfig, CACHE_DIR_ENV,
};
use crate::viz;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "weaksed", version, about = "Weakly-labelled sound event detection experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunOverrides {
    /// Validation fold.
    #[arg(long)]
    pub fold: Option<usize>,
    /// Pooling head: gmp, gap, gwrp, attention or 2ap.
    #[arg(long)]
    pub head: Option<String>,
    /// Weight of the reconstruction loss.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic corpus to WAV files plus a manifest.
    Mix(Common),
    /// Compute (and cache) log-mel features for the corpus.
    Extract(Common),
    /// Train one fold.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Score a checkpoint on a validation fold.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fold to score; defaults to the checkpoint's validation fold.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Train every (head, alpha, fold) cell and summarize per SNR.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Restrict to one head, alpha or fold.
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Eight-panel attention walkthrough for one clip.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: String,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

/// Loaded config plus where its outputs go.
struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.set_seed(seed);
        }
        let out = common
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs"));
        std::fs::create_dir_all(&out)?;
        Ok(Self { cfg, out })
    }

    fn apply(&mut self, o: &RunOverrides) -> Result<()> {
        if let Some(fold) = o.fold {
            self.cfg.training.fold = fold;
            self.cfg.ablation.folds = Some(vec![fold]);
        }
        if let Some(name) = &o.head {
            let head: HeadKind = name.parse()?;
            self.cfg.model.head = head.clone();
            self.cfg.ablation.heads = vec![head];
        }
        if let Some(alpha) = o.alpha {
            self.cfg.loss = LossConfig::new(alpha)?;
            self.cfg.ablation.alphas = vec![alpha];
        }
        self.cfg.validate()
    }

    fn corpus_dir(&self) -> PathBuf {
        self.cfg.corpus_dir.clone().unwrap_or_else(|| self.out.join("corpus"))
    }

    /// The corpus on disk, generated first if it does not exist yet. Training
    /// always reads the written WAV files so that features do not depend on
    /// whether `mix` ran in a separate step.
    fn corpus(&self) -> Result<Corpus> {
        let dir = self.corpus_dir();
        if !dir.join("manifest.json").is_file() {
            eprintln!("mixing corpus into {}", dir.display());
            write_corpus(&generate_toy_corpus(&self.cfg.datamix)?, &dir)?;
        }
        let corpus = Corpus::load(&dir)?;
        if self.cfg.corpus_dir.is_none() {
            let expected = self.cfg.datamix.with_generators();
            if corpus.manifest.generator.as_ref() != Some(&expected) {
                return Err(Error::InvalidConfig(format!(
                    "the corpus in {} was mixed from different datamix settings; \
                     use a fresh --out or delete it",
                    dir.display()
                )));
            }
        }
        Ok(corpus)
    }

    fn features(&self) -> Result<FeatureSet> {
        let corpus = self.corpus()?;
        let cache = std::env::var_os(CACHE_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out.join("cache"));
        FeatureSet::from_corpus(&corpus, &self.cfg.features, Some(&cache))
    }

    fn provenance(&self, dir: &Path, command: &str, details: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let record = json!({
            "command": command,
            "config_hash": self.cfg.hash(),
            "config": self.cfg,
            "details": details,
        });
        std::fs::write(dir.join(format!("{command}.json")), serde_json::to_string_pretty(&record)?)?;
        println!("{command}: config {} -> {}", self.cfg.hash(), dir.display());
        Ok(())
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!("no checkpoint at {}", path.display())));
    }
    Checkpoint::load(path)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mix(common) => {
            let ctx = Context::new(&common)?;
            let dir = ctx.corpus_dir();
            let corpus = generate_toy_corpus(&ctx.cfg.datamix)?;
            write_corpus(&corpus, &dir)?;
            let manifest_hash = format!("{:016x}", crate::features::config_hash(&corpus.manifest));
            ctx.provenance(
                &dir,
                "mix",
                json!({ "clips": corpus.clips.len(), "manifest_hash": manifest_hash }),
            )
        }
        Command::Extract(common) => {
            let ctx = Context::new(&common)?;
            let fs = ctx.features()?;
            let frames: Vec<usize> = fs.specs.iter().map(|s| s.n_frames()).collect();
            ctx.provenance(
                &ctx.out,
                "extract",
                json!({
                    "clips": fs.len(),
                    "n_mels": fs.n_mels(),
                    "frames_min": frames.iter().min(),
                    "frames_max": frames.iter().max(),
                    "source_hash": format!("{:016x}", fs.source_hash),
                }),
            )
        }
        Command::Train { common, overrides } => {
            let mut ctx = Context::new(&common)?;
            ctx.apply(&overrides)?;
            let fs = ctx.features()?;
            let train_cfg = ctx.cfg.train_config();
            let outcome = train_fold_with(&fs, &ctx.cfg.model, &train_cfg, &ctx.cfg.loss, |e| {
                eprintln!(
                    "epoch {:>3}  loss {:.4}  val auc {}  val micro-P {:.4}",
                    e.epoch,
                    e.train_total,
                    e.val_auc.map_or("n/a".into(), |a| format!("{a:.4}")),
                    e.val_micro_precision
                );
            })?;
            let dir = ctx.out.join("train").join(format!(
                "{}_alpha{}_fold{}",
                ctx.cfg.model.head.name(),
                ctx.cfg.loss.alpha,
                train_cfg.fold
            ));
            outcome.save(&dir)?;
            ctx.provenance(
                &dir,
                "train",
                json!({
                    "head": outcome.checkpoint.head,
                    "best_epoch": outcome.checkpoint.epoch,
                    "metrics": outcome.checkpoint.metrics,
                    "run_hash": outcome.checkpoint.config_hash,
                }),
            )
        }
        Command::Evaluate { common, checkpoint, fold } => {
            let ctx = Context::new(&common)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let fs = ctx.features()?;
            let fold = fold.unwrap_or(ckpt.fold);
            let report = evaluate_checkpoint(&ckpt, &fs, fold, ctx.cfg.metrics.threshold)?;
            let stem = checkpoint
                .parent()
                .and_then(|p| p.file_name())
                .map_or_else(|| "checkpoint".into(), |n| n.to_string_lossy().into_owned());
            let dir = ctx.out.join("evaluate").join(format!("{stem}_fold{fold}"));
            std::fs::create_dir_all(&dir)?;
            report.save_json(dir.join("metrics.json"))?;
            report.save_per_class_csv(dir.join("per_class.csv"))?;
            ctx.provenance(
                &dir,
                "evaluate",
                json!({
                    "checkpoint": checkpoint,
                    "checkpoint_hash": ckpt.config_hash,
                    "fold": fold,
                    "micro_precision": report.micro_precision,
                    "macro_precision": report.macro_precision,
                    "auc": report.auc,
                }),
            )
        }
        Command::Ablate { common, overrides } => {
            let mut ctx = Context::new(&common)?;
            ctx.apply(&overrides)?;
            let fs = ctx.features()?;
            let dir = ctx.out.join("ablation");
            let (report, cells) = run_ablation(
                &fs,
                &ctx.cfg.model,
                &ctx.cfg.train_config(),
                &ctx.cfg.ablation,
                Some(&dir),
                |cell, epoch| match epoch {
                    Some(e) => eprintln!(
                        "{} alpha={} fold={} epoch {:>3} val auc {}",
                        cell.head,
                        cell.alpha,
                        cell.fold,
                        e.epoch,
                        e.val_auc.map_or("n/a".into(), |a| format!("{a:.4}"))
                    ),
                    None => eprintln!("{} alpha={} fold={} done", cell.head, cell.alpha, cell.fold),
                },
            )?;
            println!("{}", report.to_markdown());
            let failed = cells.iter().filter(|c| matches!(c.outcome, crate::training::CellOutcome::Failed { .. })).count();
            ctx.provenance(&dir, "ablate", json!({ "cells": cells.len(), "failed_cells": failed }))
        }
        Command::Visualize { common, checkpoint, clip } => {
            let ctx = Context::new(&common)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let fs = ctx.features()?;
            let i = fs
                .index_of(&clip)
                .ok_or_else(|| Error::InvalidArgument(format!("clip {clip:?} is not in the corpus")))?;
            let input = ckpt.standardizer.apply(&fs.specs[i])?;
            let dir = ctx.out.join("visualize").join(&clip);
            let v = viz::visualize(&ckpt, input.view(), &dir)?;
            ctx.provenance(
                &dir,
                "visualize",
                json!({
                    "checkpoint": checkpoint,
                    "checkpoint_hash": ckpt.config_hash,
                    "clip": clip,
                    "top_classes": v.top_classes,
                    "panels": v.panels.iter().map(|p| &p.title).collect::<Vec<_>>(),
                }),
            )
        }
    }
}
