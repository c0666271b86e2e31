// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{ArrayView, ArrayViewMut, Dimension, Zip};

use super::Gradients;
use crate::error::{check_dim, Result};
use crate::real::Real;
use crate::sae::SaeParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &SaeParams<T>) -> Self {
        Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            step_count: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update<T: Real, D: Dimension>(
    p: ArrayViewMut<T, D>,
    g: ArrayView<T, D>,
    m: ArrayViewMut<T, D>,
    v: ArrayViewMut<T, D>,
    lr: f64,
    c1: f64,
    c2: f64,
    b1: f64,
    b2: f64,
    eps: f64,
) {
    let (b1, b2) = (T::lit(b1), T::lit(b2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let (c1, c2, lr, eps) = (T::lit(c1), T::lit(c2), T::lit(lr), T::lit(eps));
    // Zip rather than slices: tied init can leave a tensor in column-major order
    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    });
}

/// One bias-corrected Adam update of all four tensors. The JumpReLU
/// threshold is not a trained parameter and is left alone.
pub fn adam_step<T: Real>(
    state: &mut AdamState<T>,
    params: &mut SaeParams<T>,
    grads: &Gradients<T>,
    lr: f64,
) -> Result<()> {
    check_dim("w_enc gradient", params.w_enc.len(), grads.w_enc.len())?;
    check_dim("b_enc gradient", params.b_enc.len(), grads.b_enc.len())?;
    check_dim("w_dec gradient", params.w_dec.len(), grads.w_dec.len())?;
    check_dim("b_dec gradient", params.b_dec.len(), grads.b_dec.len())?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    macro_rules! step {
        ($field:ident) => {
            update(
                params.$field.view_mut(),
                grads.$field.view(),
                state.m.$field.view_mut(),
                state.v.$field.view_mut(),
                lr,
                c1,
                c2,
                b1,
                b2,
                eps,
            )
        };
    }
    step!(w_enc);
    step!(b_enc);
    step!(w_dec);
    step!(b_dec);
    Ok(())
}
