//! The multi-task objective, the fold-wise training loop and the
//! auxiliary-weight ablation.

mod ablation;
mod data;
mod loss;
mod trainer;

pub use ablation::{
    cell_seed, run_ablation, snr_levels, AblationConfig, AblationReport, AblationRow, CellOutcome, CellResult,
    SnrMetrics,
};
pub use data::{FeatureSet, CACHE_DIR_ENV};
pub use loss::{
    bce_grad, bce_loss, mse_grad, mse_loss, mtl_loss, LossConfig, MtlLoss, ALPHA_PRESETS, BCE_CLAMP,
};
pub use trainer::{
    evaluate_checkpoint, predict, train_fold, train_fold_with, EpochRecord, RunManifest, TrainConfig,
    TrainHistory, TrainOutcome,
};
