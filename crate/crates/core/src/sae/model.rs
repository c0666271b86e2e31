// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::Array2;

use super::{decode_batch, encode_batch, SaeConfig, SaeParams};
use crate::error::Result;
use crate::normalize::NormFactors;

/// A configured SAE ready to run on raw activations.
///
/// `pending_norm` is set while the weights still live in normalized space
/// (straight out of training); inputs are then scaled by `s_in` on the way
/// in and outputs divided by `s_out` on the way out. After post-processing
/// the factors are folded into the weights and `pending_norm` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sae {
    pub config: SaeConfig,
    pub params: SaeParams<f32>,
    pub pending_norm: Option<NormFactors>,
}

impl Sae {
    pub fn new(config: SaeConfig, params: SaeParams<f32>) -> Result<Self> {
        config.validate()?;
        params.check_shape(&config)?;
        Ok(Self {
            config,
            params,
            pending_norm: None,
        })
    }

    pub fn with_pending_norm(mut self, factors: NormFactors) -> Self {
        self.pending_norm = Some(factors);
        self
    }

    fn scaled_input(&self, x: &Array2<f32>) -> Option<Array2<f32>> {
        self.pending_norm.map(|f| x * f.s_in as f32)
    }

    /// Dense `N x F` codes for raw inputs, at the configured `k`.
    pub fn encode(&self, x: &Array2<f32>) -> Result<Array2<f32>> {
        let scaled = self.scaled_input(x);
        let input = scaled.as_ref().unwrap_or(x);
        encode_batch(&self.config, &self.params, input.view(), self.config.k)
    }

    /// Codes and raw-scale reconstructions.
    pub fn forward(&self, x: &Array2<f32>) -> Result<(Array2<f32>, Array2<f32>)> {
        let codes = self.encode(x)?;
        let mut x_hat = decode_batch(&self.params, codes.view())?;
        if let Some(f) = self.pending_norm {
            x_hat /= f.s_out as f32;
        }
        Ok((codes, x_hat))
    }

    pub fn reconstruct(&self, x: &Array2<f32>) -> Result<Array2<f32>> {
        self.forward(x).map(|(_, x_hat)| x_hat)
    }
}
