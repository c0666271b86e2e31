// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoder constraints for vanilla SAEs: project out the gradient component
//! parallel to each decoder column before the step, renormalize the columns
//! to unit norm after it. TopK training uses neither.

use super::Gradients;
use crate::real::Real;
use crate::sae::SaeParams;

/// Remove from each decoder-column gradient its component along that column.
pub fn project_decoder_grads<T: Real>(params: &SaeParams<T>, grads: &mut Gradients<T>) {
    for (col, mut g) in params
        .w_dec
        .columns()
        .into_iter()
        .zip(grads.w_dec.columns_mut())
    {
        let nsq = col.dot(&col);
        if nsq > T::zero() {
            let coef = g.dot(&col) / nsq;
            g.scaled_add(-coef, &col);
        }
    }
}

/// Rescale every nonzero decoder column to unit 2-norm.
pub fn renormalize_decoder<T: Real>(params: &mut SaeParams<T>) {
    for mut col in params.w_dec.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm > T::zero() {
            col.mapv_inplace(|v| v / norm);
        }
    }
}
