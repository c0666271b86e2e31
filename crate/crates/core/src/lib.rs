// SPDX-License-Identifier: MIT OR Apache-2.0

//! # saekit
//!
//! Sparse autoencoder (SAE) toolkit: train TopK, vanilla and transcoder SAEs
//! on streamed activation vectors, post-process them for inference, evaluate
//! them and analyze their decoder geometry.
//!
//! ## Modules
//!
//! - [`sae`]: forward math (ReLU / norm-weighted TopK / JumpReLU encoders, decoder).
//! - [`optimizer`]: initialization, losses, analytic gradients, Adam, LR and
//!   K-annealing schedules, the training loop and the checkpoint container.
//! - [`normalize`]: input/output norm factors, weight folding, decoder
//!   unitization and JumpReLU threshold calibration.
//! - [`activations`]: activation sources (synthetic superposition generator,
//!   binary activation files) and the shuffling buffer.
//! - [`metrics`]: L0, explained variance, MSE, delta downstream loss and
//!   firing-frequency diagnostics.
//! - [`geometry`]: decoder cosine similarity, neighbors, cross-SAE matching
//!   and the Johnson-Lindenstrauss random baseline.
//! - [`autointerp`]: top-activating contexts, the scoring prompt and an
//!   HTTP chat-completion client.
//! - [`cli`]: run configuration and the commands behind the `saekit` binary.
//!
//! ## Quick start
//!
//! ```no_run
//! use saekit::activations::{SyntheticDictionary, SyntheticSource};
//! use saekit::optimizer::{train, TrainOptions, TrainSchedule};
//! use saekit::sae::SaeConfig;
//!
//! # fn main() -> saekit::Result<()> {
//! let dict = SyntheticDictionary::default_with_seed(0);
//! let mut source = SyntheticSource::new(dict, 1);
//! let config = SaeConfig::topk(64, 8, 5)?;
//! let schedule = TrainSchedule::new(500, 1024);
//! let run = train(&config, &schedule, &mut source, 7, &TrainOptions::default())?;
//! println!("final mse {}", run.history.records.last().unwrap().mse);
//! # Ok(())
//! # }
//! ```

pub mod activations;
pub mod autointerp;
mod bytes;
pub mod cli;
mod error;
pub mod geometry;
pub mod metrics;
pub mod normalize;
pub mod optimizer;
mod real;
pub mod sae;

pub use error::{Result, SaeError};
pub use real::Real;
