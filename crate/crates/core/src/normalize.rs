// SPDX-License-Identifier: MIT OR Apache-2.0

//! Input/output normalization and the post-training transforms.
//!
//! Training runs on `x_in * s_in` (and targets `x_out * s_out`) where
//! `s = sqrt(D) / E[||x||]`. After training, [`fold_norm_into_params`] moves
//! the factors into the weights so the SAE operates on raw activations,
//! [`unitize_decoder`] gives every decoder column unit norm, and
//! [`calibrate_jumprelu`] picks the threshold for JumpReLU inference.

use ndarray::Axis;

use crate::activations::{collect_valid, ActivationBatch, ActivationSource};
use crate::error::{Result, SaeError};
use crate::real::Real;
use crate::sae::{preactivate_batch, PositionKind, SaeConfig, SaeParams, Variant};

pub const DEFAULT_NORM_SAMPLES: usize = 100_000;
pub const MIN_CALIBRATION_TOKENS: usize = 10_000;
const DEAD_COLUMN_NORM: f64 = 1e-12;
const READ_CHUNK: usize = 4096;

/// Scalar normalization factors for inputs and targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormFactors {
    pub s_in: f64,
    pub s_out: f64,
}

impl NormFactors {
    pub const IDENTITY: Self = Self {
        s_in: 1.0,
        s_out: 1.0,
    };

    pub fn new(s_in: f64, s_out: f64) -> Result<Self> {
        for (name, v) in [("s_in", s_in), ("s_out", s_out)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SaeError::Contract(format!(
                    "{name} must be finite and positive (got {v})"
                )));
            }
        }
        Ok(Self { s_in, s_out })
    }
}

/// `sqrt(D)` over the mean 2-norm of the first `n_samples` valid rows.
///
/// Targets get their own factor when the source carries them; otherwise
/// `s_out = s_in`.
pub fn estimate_norm_factors(
    source: &mut dyn ActivationSource,
    n_samples: usize,
) -> Result<NormFactors> {
    if n_samples == 0 {
        return Err(SaeError::Contract("n_samples must be at least 1".into()));
    }
    let d = source.d_model() as f64;
    let mut seen = 0usize;
    let (mut sum_in, mut sum_out) = (0.0f64, 0.0f64);
    while seen < n_samples {
        let Some(batch) = collect_valid(source, (n_samples - seen).min(READ_CHUNK))? else {
            break;
        };
        sum_in += row_norm_sum(&batch.x_in);
        if let Some(out) = &batch.x_out {
            sum_out += row_norm_sum(out);
        }
        seen += batch.len();
    }
    if seen == 0 {
        return Err(SaeError::Contract(
            "no valid rows available for norm estimation".into(),
        ));
    }
    let mean_in = sum_in / seen as f64;
    if mean_in <= 0.0 {
        return Err(SaeError::ZeroMeanNorm { what: "input" });
    }
    let s_in = d.sqrt() / mean_in;
    let s_out = if source.has_targets() {
        let mean_out = sum_out / seen as f64;
        if mean_out <= 0.0 {
            return Err(SaeError::ZeroMeanNorm { what: "target" });
        }
        d.sqrt() / mean_out
    } else {
        s_in
    };
    NormFactors::new(s_in, s_out)
}

fn row_norm_sum<T: Real>(x: &ndarray::Array2<T>) -> f64 {
    x.axis_iter(Axis(0))
        .map(|r| r.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt())
        .sum()
}

/// Scale inputs by `s_in` and targets by `s_out`.
pub fn apply_norm<T: Real>(
    batch: &ActivationBatch<T>,
    factors: &NormFactors,
) -> ActivationBatch<T> {
    let (s_in, s_out) = (T::lit(factors.s_in), T::lit(factors.s_out));
    ActivationBatch {
        x_in: &batch.x_in * s_in,
        x_out: batch.x_out.as_ref().map(|o| o * s_out),
        valid_mask: batch.valid_mask.clone(),
    }
}

/// Rewrite weights trained in normalized space so they act on raw inputs
/// and produce raw-scale outputs.
///
/// `W_dec *= s_in / s_out`, `b_dec /= s_out`, `b_enc /= s_in`; `W_enc` is
/// unchanged. Preactivations on raw inputs come out `1 / s_in` times their
/// normalized-space values, which leaves every TopK selection unchanged.
pub fn fold_norm_into_params<T: Real>(
    params: &SaeParams<T>,
    factors: &NormFactors,
) -> SaeParams<T> {
    let mut out = params.clone();
    if factors.s_in != factors.s_out {
        out.w_dec *= T::lit(factors.s_in / factors.s_out);
    }
    out.b_dec /= T::lit(factors.s_out);
    out.b_enc /= T::lit(factors.s_in);
    out
}

/// Give every decoder column unit norm, moving the norm into the matching
/// encoder row and bias. The reconstruction map and the norm-weighted
/// scores are unchanged.
pub fn unitize_decoder<T: Real>(params: &SaeParams<T>) -> Result<SaeParams<T>> {
    let norms = params.decoder_col_norms();
    let dead: Vec<usize> = norms
        .iter()
        .enumerate()
        .filter(|(_, n)| n.as_f64() < DEAD_COLUMN_NORM)
        .map(|(i, _)| i)
        .collect();
    if !dead.is_empty() {
        return Err(SaeError::DeadColumns { indices: dead });
    }
    let mut out = params.clone();
    for (i, &n) in norms.iter().enumerate() {
        if n == T::one() {
            continue;
        }
        out.w_dec.column_mut(i).mapv_inplace(|v| v / n);
        out.w_enc.row_mut(i).mapv_inplace(|v| v * n);
        out.b_enc[i] *= n;
    }
    Ok(out)
}

/// Threshold chosen so that, over `n_tokens` valid rows of `source`, exactly
/// `k * n_tokens` norm-weighted preactivations exceed it.
///
/// The threshold sits halfway between the `(k n)`-th and `(k n + 1)`-th
/// largest pooled positive score (zero when there is no further score).
/// On success `params.theta` is set and `config.variant` becomes JumpReLU.
pub fn calibrate_jumprelu(
    config: &mut SaeConfig,
    params: &mut SaeParams<f32>,
    source: &mut dyn ActivationSource,
    k: usize,
    n_tokens: usize,
) -> Result<f32> {
    if n_tokens < MIN_CALIBRATION_TOKENS {
        return Err(SaeError::Contract(format!(
            "calibration needs at least {MIN_CALIBRATION_TOKENS} tokens (got {n_tokens})"
        )));
    }
    let theta = calibrate_threshold(params, source, k, n_tokens)?;
    params.theta = Some(theta);
    config.variant = Variant::JumpRelu;
    Ok(theta)
}

/// Threshold search behind [`calibrate_jumprelu`] without the minimum-token
/// guard or the in-place switch.
pub fn calibrate_threshold(
    params: &SaeParams<f32>,
    source: &mut dyn ActivationSource,
    k: usize,
    n_tokens: usize,
) -> Result<f32> {
    if k == 0 {
        return Err(SaeError::Contract("k must be positive".into()));
    }
    let norms = params.decoder_col_norms();
    let mut pool: Vec<f32> = Vec::new();
    let mut seen = 0usize;
    while seen < n_tokens {
        let Some(batch) = collect_valid(source, (n_tokens - seen).min(READ_CHUNK))? else {
            break;
        };
        let pre = preactivate_batch(params, batch.x_in.view())?;
        for row in pre.axis_iter(Axis(0)) {
            pool.extend(
                row.iter()
                    .zip(norms.iter())
                    .map(|(&p, &n)| p * n)
                    .filter(|&s| s > 0.0),
            );
        }
        seen += batch.len();
    }
    if seen < n_tokens {
        return Err(SaeError::Contract(format!(
            "source ran out after {seen} of {n_tokens} calibration tokens"
        )));
    }
    let needed = k * n_tokens;
    if pool.len() < needed {
        return Err(SaeError::UnreachableSparsity {
            needed,
            available: pool.len(),
        });
    }
    let desc = |a: &f32, b: &f32| b.total_cmp(a);
    let (_, kth, rest) = pool.select_nth_unstable_by(needed - 1, desc);
    let kth = *kth;
    let next = rest.iter().copied().max_by(f32::total_cmp).unwrap_or(0.0);
    Ok(0.5 * (kth + next))
}

/// Check that the factors are consistent with the position kind.
pub fn check_factors(config: &SaeConfig, factors: &NormFactors) -> Result<()> {
    if config.position_kind == PositionKind::Autoencoder && factors.s_in != factors.s_out {
        return Err(SaeError::Contract(format!(
            "autoencoder requires s_in == s_out (got {} and {})",
            factors.s_in, factors.s_out
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
