//! Desk-scale training: reverse-mode gradients for every layer, MSE
//! objective, Adam with a warmup+cosine schedule, per-epoch checkpoints and
//! last-k averaging.

pub mod adam;
pub mod backward;
pub mod gradcheck;
pub mod loss;
pub mod schedule;
pub mod train;

pub use adam::{adam_step, clip_global_norm, OptimizerState};
pub use backward::{backward, forward_with_cache};
pub use gradcheck::{finite_difference_check, finite_difference_check_with_fault, GradCheckReport};
pub use loss::{mse_flat, mse_loss};
pub use schedule::{lr_at, TrainConfig};
pub use train::{identity_task_losses, train, EpochStats, TrainOutcome};

// Checkpoint averaging shares the checkpoint container with the model; the
// operation itself belongs to the training workflow.
pub use crate::pipeline::average_checkpoints;
