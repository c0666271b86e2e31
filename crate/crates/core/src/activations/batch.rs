// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{Array2, Axis};

use crate::error::{check_dim, Result, SaeError};
use crate::real::Real;

/// A block of activation rows with a per-row validity flag.
///
/// `x_out` carries the transcoder targets and is `None` for autoencoder data.
/// Rows whose flag is `false` (sequence-boundary tokens) are never trained or
/// evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBatch<T: Real = f32> {
    pub x_in: Array2<T>,
    pub x_out: Option<Array2<T>>,
    pub valid_mask: Vec<bool>,
}

impl<T: Real> ActivationBatch<T> {
    /// All-valid autoencoder batch.
    pub fn new(x_in: Array2<T>) -> Self {
        let n = x_in.nrows();
        Self {
            x_in,
            x_out: None,
            valid_mask: vec![true; n],
        }
    }

    /// All-valid transcoder batch.
    pub fn with_targets(x_in: Array2<T>, x_out: Array2<T>) -> Result<Self> {
        check_dim("target rows", x_in.nrows(), x_out.nrows())?;
        check_dim("target columns", x_in.ncols(), x_out.ncols())?;
        let n = x_in.nrows();
        Ok(Self {
            x_in,
            x_out: Some(x_out),
            valid_mask: vec![true; n],
        })
    }

    pub fn with_mask(mut self, valid_mask: Vec<bool>) -> Result<Self> {
        check_dim("valid mask", self.x_in.nrows(), valid_mask.len())?;
        self.valid_mask = valid_mask;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.x_in.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x_in.nrows() == 0
    }

    pub fn d_model(&self) -> usize {
        self.x_in.ncols()
    }

    pub fn n_valid(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }

    /// Reconstruction target: `x_out` for transcoders, `x_in` otherwise.
    pub fn target(&self) -> &Array2<T> {
        self.x_out.as_ref().unwrap_or(&self.x_in)
    }

    /// Copy of the batch restricted to valid rows.
    pub fn valid_only(&self) -> Self {
        if self.valid_mask.iter().all(|&v| v) {
            return self.clone();
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.valid_mask[i]).collect();
        Self {
            x_in: self.x_in.select(Axis(0), &keep),
            x_out: self.x_out.as_ref().map(|o| o.select(Axis(0), &keep)),
            valid_mask: vec![true; keep.len()],
        }
    }

    /// Concatenate batches with matching width and kind.
    pub fn concat(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| SaeError::Contract("cannot concatenate zero batches".into()))?;
        let d = first.d_model();
        let has_out = first.x_out.is_some();
        for p in parts {
            check_dim("batch width", d, p.d_model())?;
            if p.x_out.is_some() != has_out {
                return Err(SaeError::Contract(
                    "cannot mix transcoder and autoencoder batches".into(),
                ));
            }
        }
        let ins: Vec<_> = parts.iter().map(|p| p.x_in.view()).collect();
        let x_in = ndarray::concatenate(Axis(0), &ins).expect("widths checked");
        let x_out = has_out.then(|| {
            let outs: Vec<_> = parts
                .iter()
                .map(|p| p.x_out.as_ref().expect("checked").view())
                .collect();
            ndarray::concatenate(Axis(0), &outs).expect("widths checked")
        });
        let valid_mask = parts
            .iter()
            .flat_map(|p| p.valid_mask.iter().copied())
            .collect();
        Ok(Self {
            x_in,
            x_out,
            valid_mask,
        })
    }

    pub fn cast<U: Real>(&self) -> ActivationBatch<U> {
        let conv = |v: &T| U::lit(v.as_f64());
        ActivationBatch {
            x_in: self.x_in.map(conv),
            x_out: self.x_out.as_ref().map(|o| o.map(conv)),
            valid_mask: self.valid_mask.clone(),
        }
    }
}
