// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pure SAE forward math: configuration, parameters, encoders and decoder.

mod config;
mod features;
mod forward;
mod model;
mod params;

pub use config::{PositionKind, SaeConfig, Site, Variant};
pub use features::FeatureVector;
pub use forward::{
    decode, decode_batch, encode, encode_batch, encode_with_k, forward, forward_batch,
    norm_weighted_topk, preactivate, preactivate_batch,
};
pub use model::Sae;
pub use params::SaeParams;

#[cfg(test)]
mod tests;
