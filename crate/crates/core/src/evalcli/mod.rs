//! Metrics, run configuration, checkpoints, training and evaluation
//! orchestration, and the command-line front end.

mod checkpoint;
pub mod cli;
mod config;
mod evaluate;
mod gradsuite;
mod metrics;
mod train;

pub use checkpoint::{Checkpoint, ModelKind, SeedLineage, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::RunConfig;
pub use evaluate::{
    diffusion_label, evaluate, lr_residual, predict_bilinear, predict_diffusion, predict_srcnn,
    results_csv, DiffusionOutput, EvalRequest, EvalSummary, SweepRow, PER_SAMPLE_FILE,
    RESULTS_FILE, SWEEP_FILE,
};
pub use metrics::{bias, metrics_report, pearson_corr, rmse, MetricsReport, SampleMetrics, RESULTS_HEADER};
pub use train::{
    resolve_dataset, sorted_pairs, topo_moments, train_srcnn, train_unet, window_mean,
    TrainOutcome, TrainingSet, DIVERGENCE_FACTOR, DIVERGENCE_PATIENCE, FINAL_LOSS_WINDOW,
    SRCNN_CHECKPOINT, SRCNN_LOSS_LOG, UNET_CHECKPOINT, UNET_LOSS_LOG,
};
pub use gradsuite::{grad_suite, toy_unet_config, GradCheckRow, END_TO_END_TOLERANCE, LAYER_TOLERANCE};
