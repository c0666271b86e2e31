// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{Array1, Array2};

use super::SaeConfig;
use crate::error::{check_dim, Result, SaeError};
use crate::real::Real;

/// The four SAE weight tensors plus the optional JumpReLU threshold.
///
/// Shapes: `w_enc` is `F x D`, `b_enc` is `F`, `w_dec` is `D x F`, `b_dec` is `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams<T: Real = f32> {
    pub w_enc: Array2<T>,
    pub b_enc: Array1<T>,
    pub w_dec: Array2<T>,
    pub b_dec: Array1<T>,
    pub theta: Option<T>,
}

impl<T: Real> SaeParams<T> {
    pub fn zeros(d_model: usize, n_features: usize) -> Self {
        Self {
            w_enc: Array2::zeros((n_features, d_model)),
            b_enc: Array1::zeros(n_features),
            w_dec: Array2::zeros((d_model, n_features)),
            b_dec: Array1::zeros(d_model),
            theta: None,
        }
    }

    pub fn d_model(&self) -> usize {
        self.w_dec.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.w_enc.nrows()
    }

    /// Check that all four tensors agree with each other and with `config`.
    pub fn check_shape(&self, config: &SaeConfig) -> Result<()> {
        let (d, f) = (config.d_model, config.n_features);
        check_dim("w_enc rows", f, self.w_enc.nrows())?;
        check_dim("w_enc cols", d, self.w_enc.ncols())?;
        check_dim("b_enc", f, self.b_enc.len())?;
        check_dim("w_dec rows", d, self.w_dec.nrows())?;
        check_dim("w_dec cols", f, self.w_dec.ncols())?;
        check_dim("b_dec", d, self.b_dec.len())
    }

    pub fn is_finite(&self) -> bool {
        self.w_enc.iter().all(|v| v.is_finite())
            && self.b_enc.iter().all(|v| v.is_finite())
            && self.w_dec.iter().all(|v| v.is_finite())
            && self.b_dec.iter().all(|v| v.is_finite())
            && self.theta.is_none_or(|t| t.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(SaeError::Contract(
                "parameters contain non-finite values".into(),
            ))
        }
    }

    /// 2-norm of every decoder column.
    pub fn decoder_col_norms(&self) -> Array1<T> {
        self.w_dec
            .columns()
            .into_iter()
            .map(|c| c.dot(&c).sqrt())
            .collect()
    }

    pub fn cast<U: Real>(&self) -> SaeParams<U> {
        let conv = |v: &T| U::lit(v.as_f64());
        SaeParams {
            w_enc: self.w_enc.map(conv),
            b_enc: self.b_enc.map(conv),
            w_dec: self.w_dec.map(conv),
            b_dec: self.b_dec.map(conv),
            theta: self.theta.map(|t| U::lit(t.as_f64())),
        }
    }
}
