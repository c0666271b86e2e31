// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{ArrayView1, ArrayView2};

use crate::activations::ActivationBatch;
use crate::error::{check_dim, Result, SaeError};
use crate::real::Real;
use crate::sae::{decode_batch, encode_batch, SaeConfig, SaeParams, Variant};

/// Per-element mean squared error: `sum((x - x_hat)^2) / D`.
pub fn mse_loss<T: Real>(x_target: ArrayView1<T>, x_hat: ArrayView1<T>) -> Result<f64> {
    check_dim("reconstruction", x_target.len(), x_hat.len())?;
    if x_target.is_empty() {
        return Err(SaeError::Contract("mse of an empty vector".into()));
    }
    let sum: f64 = x_target
        .iter()
        .zip(x_hat.iter())
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum();
    Ok(sum / x_target.len() as f64)
}

/// [`mse_loss`] averaged over the rows of a batch.
pub fn mse_loss_batch<T: Real>(x_target: ArrayView2<T>, x_hat: ArrayView2<T>) -> Result<f64> {
    check_dim("reconstruction rows", x_target.nrows(), x_hat.nrows())?;
    check_dim("reconstruction cols", x_target.ncols(), x_hat.ncols())?;
    if x_target.is_empty() {
        return Err(SaeError::Contract("mse of an empty batch".into()));
    }
    let sum: f64 = x_target
        .iter()
        .zip(x_hat.iter())
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum();
    Ok(sum / x_target.len() as f64)
}

/// MSE plus `l1_coeff` times the mean per-token sum of activations.
pub fn vanilla_loss<T: Real>(
    config: &SaeConfig,
    params: &SaeParams<T>,
    batch: &ActivationBatch<T>,
) -> Result<f64> {
    if config.variant != Variant::Vanilla {
        return Err(SaeError::Contract(format!(
            "vanilla_loss called with {} configuration",
            config.variant
        )));
    }
    let batch = batch.valid_only();
    if batch.is_empty() {
        return Err(SaeError::Contract("batch has no valid rows".into()));
    }
    let codes = encode_batch(config, params, batch.x_in.view(), config.k)?;
    let x_hat = decode_batch(params, codes.view())?;
    let mse = mse_loss_batch(batch.target().view(), x_hat.view())?;
    let l1: f64 = codes.iter().map(|v| v.as_f64()).sum::<f64>() / batch.len() as f64;
    Ok(mse + config.l1_coeff * l1)
}
