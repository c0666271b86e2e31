// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::real::Real;

/// Sparse latent code of one token: strictly positive activations only,
/// indices ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector<T: Real = f32> {
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> FeatureVector<T> {
    pub fn new() -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from `(index, value)` pairs; non-positive values are dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, T)>) -> Self {
        let mut pairs: Vec<(usize, T)> =
            pairs.into_iter().filter(|(_, v)| *v > T::zero()).collect();
        pairs.sort_by_key(|(i, _)| *i);
        pairs.dedup_by_key(|(i, _)| *i);
        let (indices, values) = pairs.into_iter().unzip();
        Self { indices, values }
    }

    /// Keep the strictly positive entries of a dense row.
    pub fn from_dense(row: impl IntoIterator<Item = T>) -> Self {
        let mut out = Self::new();
        for (i, v) in row.into_iter().enumerate() {
            if v > T::zero() {
                out.indices.push(i);
                out.values.push(v);
            }
        }
        out
    }

    /// Number of active features.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    /// Activation of feature `i`, zero when inactive.
    pub fn get(&self, i: usize) -> T {
        self.indices
            .binary_search(&i)
            .map_or(T::zero(), |pos| self.values[pos])
    }

    pub fn to_dense(&self, n_features: usize) -> Vec<T> {
        let mut out = vec![T::zero(); n_features];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}
