// SPDX-License-Identifier: MIT OR Apache-2.0

//! Encoder / decoder math.
//!
//! ```text
//! preact   = ReLU(W_enc x + b_enc)
//! score_i  = preact_i * ||W_dec[:, i]||
//! TopK     : f_i = preact_i  if i is among the k largest scores
//! JumpReLU : f_i = preact_i  if score_i > theta
//! x_hat    = W_dec f + b_dec
//! ```
//!
//! The decoder norm enters only the selection; stored activations are the
//! unweighted preactivations.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{FeatureVector, SaeConfig, SaeParams, Variant};
use crate::error::{check_dim, Result, SaeError};
use crate::real::Real;

/// `ReLU(W_enc x + b_enc)` for a single vector.
pub fn preactivate<T: Real>(params: &SaeParams<T>, x: ArrayView1<T>) -> Result<Array1<T>> {
    check_dim("input vector", params.d_model(), x.len())?;
    let mut pre = params.w_enc.dot(&x) + &params.b_enc;
    pre.mapv_inplace(relu);
    Ok(pre)
}

/// Row-wise [`preactivate`] for an `N x D` batch, returning `N x F`.
pub fn preactivate_batch<T: Real>(params: &SaeParams<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
    check_dim("input columns", params.d_model(), x.ncols())?;
    let mut pre = x.dot(&params.w_enc.t());
    pre += &params.b_enc;
    pre.mapv_inplace(relu);
    Ok(pre)
}

#[inline]
fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Descending by score, ascending by index on ties.
#[inline]
fn rank_cmp<T: Real>(scores: &[T], a: usize, b: usize) -> Ordering {
    scores[b]
        .partial_cmp(&scores[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Indices of the `k` largest scores, ties to the lower index, returned ascending.
pub(crate) fn top_k_indices<T: Real>(scores: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_cmp(scores, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Binary mask over the `k` largest values of `preact_i * dec_col_norms_i`.
pub fn norm_weighted_topk<T: Real>(
    preact: ArrayView1<T>,
    dec_col_norms: ArrayView1<T>,
    k: usize,
) -> Result<Vec<bool>> {
    check_dim("decoder norm vector", preact.len(), dec_col_norms.len())?;
    if k == 0 || k > preact.len() {
        return Err(SaeError::Contract(format!(
            "k = {k} outside 1..={}",
            preact.len()
        )));
    }
    let scores: Vec<T> = preact
        .iter()
        .zip(dec_col_norms.iter())
        .map(|(&p, &n)| p * n)
        .collect();
    let mut mask = vec![false; scores.len()];
    for i in top_k_indices(&scores, k) {
        mask[i] = true;
    }
    Ok(mask)
}

fn theta_of<T: Real>(config: &SaeConfig, params: &SaeParams<T>) -> Result<Option<T>> {
    match config.variant {
        Variant::JumpRelu => params
            .theta
            .map(Some)
            .ok_or_else(|| SaeError::Config("JumpReLU variant requires a calibrated theta".into())),
        _ => Ok(None),
    }
}

/// Zero out, in place, every entry of a preactivation row that the variant drops.
fn apply_sparsity<T: Real>(
    variant: Variant,
    row: &mut [T],
    norms: &[T],
    k: usize,
    theta: Option<T>,
    scratch: &mut Vec<T>,
) {
    match variant {
        Variant::Vanilla => {}
        Variant::TopK => {
            if k >= row.len() {
                return;
            }
            scratch.clear();
            scratch.extend(row.iter().zip(norms).map(|(&p, &n)| p * n));
            let mut keep = vec![false; row.len()];
            for i in top_k_indices(scratch, k) {
                keep[i] = true;
            }
            for (v, keep) in row.iter_mut().zip(keep) {
                if !keep {
                    *v = T::zero();
                }
            }
        }
        Variant::JumpRelu => {
            let theta = theta.unwrap_or_else(T::zero);
            for (v, &n) in row.iter_mut().zip(norms) {
                if *v * n <= theta {
                    *v = T::zero();
                }
            }
        }
    }
}

/// Sparse code of a single input under the configured variant.
pub fn encode<T: Real>(
    config: &SaeConfig,
    params: &SaeParams<T>,
    x: ArrayView1<T>,
) -> Result<FeatureVector<T>> {
    encode_with_k(config, params, x, config.k)
}

/// [`encode`] with an explicit active count, as used during K-annealing.
pub fn encode_with_k<T: Real>(
    config: &SaeConfig,
    params: &SaeParams<T>,
    x: ArrayView1<T>,
    k: usize,
) -> Result<FeatureVector<T>> {
    params.check_shape(config)?;
    let theta = theta_of(config, params)?;
    let mut pre = preactivate(params, x)?;
    let norms = params.decoder_col_norms();
    let row = pre.as_slice_mut().expect("fresh array is contiguous");
    apply_sparsity(
        config.variant,
        row,
        norms.as_slice().expect("contiguous"),
        k,
        theta,
        &mut Vec::new(),
    );
    Ok(FeatureVector::from_dense(pre.iter().copied()))
}

/// Dense `N x F` sparse-code matrix for a batch. Inactive entries are zero.
pub fn encode_batch<T: Real>(
    config: &SaeConfig,
    params: &SaeParams<T>,
    x: ArrayView2<T>,
    k: usize,
) -> Result<Array2<T>> {
    params.check_shape(config)?;
    let theta = theta_of(config, params)?;
    let mut pre = preactivate_batch(params, x)?;
    let norms = params.decoder_col_norms();
    let norms = norms.as_slice().expect("contiguous");
    let mut scratch = Vec::with_capacity(config.n_features);
    for mut row in pre.axis_iter_mut(Axis(0)) {
        let row = row.as_slice_mut().expect("row-major batch");
        apply_sparsity(config.variant, row, norms, k, theta, &mut scratch);
    }
    Ok(pre)
}

/// `W_dec f + b_dec`, touching only the active columns.
pub fn decode<T: Real>(params: &SaeParams<T>, f: &FeatureVector<T>) -> Result<Array1<T>> {
    let n_features = params.n_features();
    if let Some(&bad) = f.indices().iter().find(|&&i| i >= n_features) {
        return Err(SaeError::DimensionMismatch {
            what: "feature index",
            expected: n_features,
            got: bad,
        });
    }
    let mut out = params.b_dec.clone();
    for (i, v) in f.iter() {
        out.scaled_add(v, &params.w_dec.column(i));
    }
    Ok(out)
}

/// Dense batch decode: `codes (N x F) -> N x D`.
pub fn decode_batch<T: Real>(params: &SaeParams<T>, codes: ArrayView2<T>) -> Result<Array2<T>> {
    check_dim("code columns", params.n_features(), codes.ncols())?;
    let mut out = codes.dot(&params.w_dec.t());
    out += &params.b_dec;
    Ok(out)
}

/// Encode then decode one vector.
pub fn forward<T: Real>(
    config: &SaeConfig,
    params: &SaeParams<T>,
    x_in: ArrayView1<T>,
) -> Result<(FeatureVector<T>, Array1<T>)> {
    let f = encode(config, params, x_in)?;
    let x_hat = decode(params, &f)?;
    Ok((f, x_hat))
}

/// Batched forward returning `(codes, reconstructions)`.
pub fn forward_batch<T: Real>(
    config: &SaeConfig,
    params: &SaeParams<T>,
    x_in: ArrayView2<T>,
) -> Result<(Array2<T>, Array2<T>)> {
    let codes = encode_batch(config, params, x_in, config.k)?;
    let x_hat = decode_batch(params, codes.view())?;
    Ok((codes, x_hat))
}
