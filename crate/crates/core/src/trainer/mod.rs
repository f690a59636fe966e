//! Training, inference, checkpointing and gradient verification for the
//! full listener model.

mod checkpoint;
mod config;
mod data;
mod gradcheck;
mod infer;
mod model;
mod optim;
mod train;

pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{OptimizerKind, Stage, TrainConfig};
pub use data::{align_rows, audio_rows, fit_norm, prepare_dyads, prepare_inputs, training_embedder, FeatureNorm, PreparedSample};
pub use gradcheck::{
    gradient_check, relative_error, BlockCheck, GradCheckOptions, GradCheckReport, FD_STEP, GRADCHECK_MAX_FRAMES,
    GRADCHECK_MAX_HIDDEN, REL_FLOOR,
};
pub use infer::{infer, InferenceModel};
pub use model::{batch_objective, is_encoder_block, ListenerModel, LossParts, Objective};
pub use optim::OptimState;
pub use train::{evaluate_losses, format_epoch_log, init_checkpoint, run_epochs, train, Checkpoint, EpochLog, LOG_HEADER};
