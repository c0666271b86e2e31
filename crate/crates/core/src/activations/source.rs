// SPDX-License-Identifier: MIT OR Apache-2.0

use super::ActivationBatch;
use crate::error::Result;

/// Anything that streams activation rows.
pub trait ActivationSource {
    /// Width `D` of every row.
    fn d_model(&self) -> usize;

    /// Whether batches carry transcoder targets.
    fn has_targets(&self) -> bool;

    /// Up to `n` further rows; `Ok(None)` once the stream is exhausted.
    ///
    /// A returned batch may be shorter than `n` only when the stream is
    /// about to end.
    fn next_batch(&mut self, n: usize) -> Result<Option<ActivationBatch>>;
}

impl<S: ActivationSource + ?Sized> ActivationSource for &mut S {
    fn d_model(&self) -> usize {
        (**self).d_model()
    }

    fn has_targets(&self) -> bool {
        (**self).has_targets()
    }

    fn next_batch(&mut self, n: usize) -> Result<Option<ActivationBatch>> {
        (**self).next_batch(n)
    }
}

impl<S: ActivationSource + ?Sized> ActivationSource for Box<S> {
    fn d_model(&self) -> usize {
        (**self).d_model()
    }

    fn has_targets(&self) -> bool {
        (**self).has_targets()
    }

    fn next_batch(&mut self, n: usize) -> Result<Option<ActivationBatch>> {
        (**self).next_batch(n)
    }
}

/// Serves rows from an in-memory batch, in order.
#[derive(Debug, Clone)]
pub struct MemorySource {
    batch: ActivationBatch,
    cursor: usize,
}

impl MemorySource {
    pub fn new(batch: ActivationBatch) -> Self {
        Self { batch, cursor: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.batch.len() - self.cursor
    }
}

impl ActivationSource for MemorySource {
    fn d_model(&self) -> usize {
        self.batch.d_model()
    }

    fn has_targets(&self) -> bool {
        self.batch.x_out.is_some()
    }

    fn next_batch(&mut self, n: usize) -> Result<Option<ActivationBatch>> {
        if self.cursor >= self.batch.len() {
            return Ok(None);
        }
        let end = (self.cursor + n).min(self.batch.len());
        let range = self.cursor..end;
        self.cursor = end;
        Ok(Some(ActivationBatch {
            x_in: self
                .batch
                .x_in
                .slice(ndarray::s![range.clone(), ..])
                .to_owned(),
            x_out: self
                .batch
                .x_out
                .as_ref()
                .map(|o| o.slice(ndarray::s![range.clone(), ..]).to_owned()),
            valid_mask: self.batch.valid_mask[range].to_vec(),
        }))
    }
}

/// Pull valid rows from `source` until `n` have been collected or the
/// stream ends. Returns `None` when no valid row remains.
pub fn collect_valid(
    source: &mut dyn ActivationSource,
    n: usize,
) -> Result<Option<ActivationBatch>> {
    let mut parts = Vec::new();
    let mut have = 0;
    while have < n {
        match source.next_batch(n - have)? {
            Some(b) => {
                let b = b.valid_only();
                have += b.len();
                if !b.is_empty() {
                    parts.push(b);
                }
            }
            None => break,
        }
    }
    if parts.is_empty() {
        return Ok(None);
    }
    ActivationBatch::concat(&parts).map(Some)
}
