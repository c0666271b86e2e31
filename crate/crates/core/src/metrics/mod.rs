// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation: L0, explained variance, MSE, delta downstream loss and
//! firing-frequency diagnostics.

mod downstream;
mod eval;
mod firing;
mod record;

pub use downstream::{DownstreamEvaluator, LinearSoftmaxReadout};
pub use eval::{
    evaluate, explained_variance, l0_mean, Autoencoder, EvalAccumulator, EvalReport, PassThrough,
};
pub use firing::{
    firing_stats, FiringHealth, FiringStats, FrequencyHistogram, INACTIVE_WARN_FRACTION,
    ULTRA_ACTIVE_FREQUENCY, ULTRA_ACTIVE_WARN_FRACTION,
};
pub use record::{parse_records, MetricRecord};

#[cfg(test)]
mod tests;
