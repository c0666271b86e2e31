// SPDX-License-Identifier: MIT OR Apache-2.0

//! Analytic gradients of the training loss.
//!
//! With `N` valid rows, per-element MSE and (vanilla only) an L1 term:
//!
//! ```text
//! L      = sum((x_hat - y)^2) / (N D) + l1 * sum(f) / N
//! G      = 2 (x_hat - y) / (N D)                 N x D
//! dW_dec = G^T f                                 D x F
//! db_dec = sum_rows(G)
//! dF     = G W_dec (+ l1 / N)                    N x F
//! dPre   = dF * [f > 0]
//! dW_enc = dPre^T x                              F x D
//! db_enc = sum_rows(dPre)
//! ```
//!
//! The TopK mask is treated as a constant; unselected features and
//! non-positive preactivations receive no gradient.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::activations::ActivationBatch;
use crate::error::{Result, SaeError};
use crate::real::Real;
use crate::sae::{decode_batch, encode_batch, SaeConfig, SaeParams, Variant};

/// Gradient record shaped like [`SaeParams`] (without the threshold).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Real = f32> {
    pub w_enc: Array2<T>,
    pub b_enc: Array1<T>,
    pub w_dec: Array2<T>,
    pub b_dec: Array1<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &SaeParams<T>) -> Self {
        Self {
            w_enc: Array2::zeros(params.w_enc.raw_dim()),
            b_enc: Array1::zeros(params.b_enc.raw_dim()),
            w_dec: Array2::zeros(params.w_dec.raw_dim()),
            b_dec: Array1::zeros(params.b_dec.raw_dim()),
        }
    }
}

/// Loss value and its gradient for one batch.
#[derive(Debug, Clone)]
pub struct LossAndGrads<T: Real = f32> {
    /// Total loss (MSE plus L1 for vanilla).
    pub loss: f64,
    pub mse: f64,
    pub grads: Gradients<T>,
}

pub(crate) struct StepOutput<T: Real> {
    pub result: LossAndGrads<T>,
    /// Dense `N x F` codes, kept for firing statistics.
    pub codes: Array2<T>,
}

/// Exact gradients at a fixed sparsity pattern. `effective_k` overrides
/// `config.k` for TopK (K-annealing); it is ignored by vanilla SAEs.
pub fn gradients<T: Real>(
    config: &SaeConfig,
    params: &SaeParams<T>,
    batch: &ActivationBatch<T>,
    effective_k: usize,
) -> Result<LossAndGrads<T>> {
    forward_backward(config, params, batch, effective_k).map(|o| o.result)
}

pub(crate) fn forward_backward<T: Real>(
    config: &SaeConfig,
    params: &SaeParams<T>,
    batch: &ActivationBatch<T>,
    effective_k: usize,
) -> Result<StepOutput<T>> {
    if config.variant == Variant::JumpRelu {
        return Err(SaeError::Config(
            "JumpReLU is inference-only and cannot be trained".into(),
        ));
    }
    if effective_k == 0 || effective_k > config.n_features {
        return Err(SaeError::Contract(format!(
            "effective_k = {effective_k} outside 1..={}",
            config.n_features
        )));
    }
    let batch = batch.valid_only();
    if batch.is_empty() {
        return Err(SaeError::Contract(
            "gradient batch has no valid rows".into(),
        ));
    }
    let x = batch.x_in.view();
    let y = batch.target().view();
    let n = batch.len();
    let d = config.d_model;

    let codes = encode_batch(config, params, x, effective_k)?;
    let x_hat = decode_batch(params, codes.view())?;
    let mut err = x_hat - y;

    let sq: f64 = err.iter().map(|v| v.as_f64().powi(2)).sum();
    let mse = sq / (n * d) as f64;
    let l1_total = if config.variant == Variant::Vanilla && config.l1_coeff > 0.0 {
        codes.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64
    } else {
        0.0
    };
    let loss = mse + config.l1_coeff * l1_total;
    if !loss.is_finite() {
        return Err(SaeError::NonFiniteLoss { step: None, loss });
    }

    err.mapv_inplace(|v| v * T::lit(2.0 / (n * d) as f64));
    let g = err;

    let b_dec = g.sum_axis(Axis(0));
    let w_dec = g.t().dot(&codes);
    let mut d_f = g.dot(&params.w_dec);
    if config.variant == Variant::Vanilla && config.l1_coeff > 0.0 {
        d_f += T::lit(config.l1_coeff / n as f64);
    }
    Zip::from(&mut d_f).and(&codes).for_each(|df, &c| {
        if c <= T::zero() {
            *df = T::zero();
        }
    });
    let w_enc = d_f.t().dot(&x);
    let b_enc = d_f.sum_axis(Axis(0));

    Ok(StepOutput {
        result: LossAndGrads {
            loss,
            mse,
            grads: Gradients {
                w_enc,
                b_enc,
                w_dec,
                b_dec,
            },
        },
        codes,
    })
}
