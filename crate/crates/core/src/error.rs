// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the toolkit.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, SaeError>;

#[derive(Debug, Error)]
pub enum SaeError {
    /// A vector or matrix had the wrong shape for the operation.
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The SAE configuration is invalid or incompatible with the request.
    #[error("configuration error: {0}")]
    Config(String),

    /// Loss became NaN or infinite during training.
    #[error("non-finite loss {loss} at step {}", step.map_or_else(|| "?".to_owned(), |s| s.to_string()))]
    NonFiniteLoss { step: Option<usize>, loss: f64 },

    /// The activation source ran dry before training finished.
    #[error("activation source exhausted after {steps_completed} of {total_steps} steps")]
    DataExhausted {
        steps_completed: usize,
        total_steps: usize,
    },

    /// Every sampled vector had zero norm, so no normalization factor exists.
    #[error("cannot estimate norm factor: mean {what} norm is zero")]
    ZeroMeanNorm { what: &'static str },

    /// Decoder columns with (numerically) zero norm.
    #[error("dead decoder columns cannot be unitized: {indices:?}")]
    DeadColumns { indices: Vec<usize> },

    /// JumpReLU calibration could not reach the requested sparsity.
    #[error("sparsity target unreachable: need {needed} positive activations, found {available}")]
    UnreachableSparsity { needed: usize, available: usize },

    /// Malformed binary file.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    /// The buffer has been drained and the producer is exhausted.
    #[error("end of activation data")]
    EndOfData,

    /// Model response did not contain a usable score.
    #[error("could not parse a 1-5 score from response: {raw:?}")]
    Scoring { raw: String },

    /// HTTP failure that persisted through all retries.
    #[error("transport error after {attempts} attempt(s): {msg}")]
    Transport { attempts: u32, msg: String },

    /// Key-value run configuration failed validation.
    #[error("invalid run configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SaeError {
    /// Attach the training step to a [`SaeError::NonFiniteLoss`].
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Self::NonFiniteLoss { loss, .. } => Self::NonFiniteLoss {
                step: Some(step),
                loss,
            },
            other => other,
        }
    }

    /// Short machine-readable tag, used by the command-line error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::DimensionMismatch { .. } => "dimension_mismatch",
            Self::Contract(_) => "contract",
            Self::Config(_) => "config",
            Self::NonFiniteLoss { .. } => "non_finite_loss",
            Self::DataExhausted { .. } => "data_exhausted",
            Self::ZeroMeanNorm { .. } => "zero_mean_norm",
            Self::DeadColumns { .. } => "dead_columns",
            Self::UnreachableSparsity { .. } => "unreachable_sparsity",
            Self::Parse { .. } => "parse",
            Self::EndOfData => "end_of_data",
            Self::Scoring { .. } => "scoring",
            Self::Transport { .. } => "transport",
            Self::InvalidConfig(_) => "invalid_config",
            Self::Io(_) => "io",
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SaeError::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
