//! Command implementations behind the `dcnn` binary: run configuration,
//! the training loop and the artifact-producing commands.

pub mod commands;
pub mod config;
pub mod train;

pub use commands::{
    cmd_activations, cmd_eval, cmd_gradcam, cmd_lr_range, cmd_preprocess, cmd_stats, EvalOutput, GradCamOutput,
    PreprocessSummary,
};
pub use config::{RunConfig, RunOverrides};
pub use train::{
    evaluate, image_stream, per_sample_losses, read_log, train, EpochLog, Evaluation, TrainSummary, BEST_CHECKPOINT,
    CONFIG_SNAPSHOT, LAST_CHECKPOINT, LOG_FILE, LOG_HEADER,
};
