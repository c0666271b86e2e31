// SPDX-License-Identifier: MIT OR Apache-2.0

//! Training: initialization, losses, analytic gradients, Adam, LR and
//! K-annealing schedules, vanilla decoder constraints, the training loop and
//! the checkpoint container.

mod adam;
mod checkpoint;
mod constraint;
mod grad;
mod init;
mod loss;
mod schedule;
mod train;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPS};
pub use checkpoint::{Checkpoint, NormState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use constraint::{project_decoder_grads, renormalize_decoder};
pub(crate) use grad::forward_backward;
pub use grad::{gradients, Gradients, LossAndGrads};
pub use init::init_params;
pub use loss::{mse_loss, mse_loss_batch, vanilla_loss};
pub use schedule::{default_warmup, k_at, lr_at, TrainSchedule, DEFAULT_BASE_LR};
pub use train::{
    train, TrainHistory, TrainOptions, TrainOutcome, TrainRecord, DEFAULT_DEAD_WINDOW_TOKENS,
};
