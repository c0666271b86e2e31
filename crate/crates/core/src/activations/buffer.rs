// SPDX-License-Identifier: MIT OR Apache-2.0

//! Shuffled producer/consumer activation buffer.
//!
//! Refill and sample alternate in one thread. Each refill tops the buffer up
//! to capacity and shuffles the whole filled region, so rows from one
//! document end up spread across many training batches.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActivationBatch, ActivationSource};
use crate::error::{Result, SaeError};

pub const DEFAULT_BUFFER_CAPACITY: usize = 500_000;

/// Rows pulled from the producer per request while refilling.
const PRODUCER_CHUNK: usize = 4096;

pub struct ShuffleBuffer<S> {
    producer: S,
    capacity: usize,
    d_model: usize,
    targets: bool,
    // row-major storage, `width` values per row
    rows: Vec<f32>,
    valid: Vec<bool>,
    rng: ChaCha8Rng,
    draining: bool,
    refills: usize,
}

impl<S: ActivationSource> ShuffleBuffer<S> {
    pub fn new(producer: S, capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(SaeError::Config(
                "buffer capacity must be at least 1".into(),
            ));
        }
        let d_model = producer.d_model();
        let targets = producer.has_targets();
        Ok(Self {
            producer,
            capacity,
            d_model,
            targets,
            rows: Vec::new(),
            valid: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            draining: false,
            refills: 0,
        })
    }

    pub fn with_default_capacity(producer: S, seed: u64) -> Result<Self> {
        Self::new(producer, DEFAULT_BUFFER_CAPACITY, seed)
    }

    fn width(&self) -> usize {
        if self.targets {
            2 * self.d_model
        } else {
            self.d_model
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fill_level(&self) -> usize {
        self.valid.len()
    }

    pub fn refill_threshold(&self) -> usize {
        self.capacity / 2
    }

    /// True once the producer has run dry; remaining rows are still served.
    pub fn is_draining(&self) -> bool {
        self.draining
    }

    /// Number of completed refills.
    pub fn refills(&self) -> usize {
        self.refills
    }

    pub fn into_producer(self) -> S {
        self.producer
    }

    /// Top up to capacity, then shuffle every filled row.
    pub fn refill(&mut self) -> Result<()> {
        if self.fill_level() > self.refill_threshold() {
            return Err(SaeError::Contract(format!(
                "refill with fill level {} above threshold {}",
                self.fill_level(),
                self.refill_threshold()
            )));
        }
        let w = self.width();
        while !self.draining && self.fill_level() < self.capacity {
            let want = (self.capacity - self.fill_level()).min(PRODUCER_CHUNK);
            match self.producer.next_batch(want)? {
                Some(b) if !b.is_empty() => {
                    for r in 0..b.len() {
                        self.rows.extend(b.x_in.row(r).iter().copied());
                        if let Some(out) = &b.x_out {
                            self.rows.extend(out.row(r).iter().copied());
                        }
                    }
                    self.valid.extend_from_slice(&b.valid_mask);
                }
                _ => self.draining = true,
            }
        }
        // Fisher-Yates over the whole filled region
        let n = self.fill_level();
        for i in (1..n).rev() {
            let j = self.rng.random_range(0..=i);
            if i != j {
                self.valid.swap(i, j);
                for c in 0..w {
                    self.rows.swap(i * w + c, j * w + c);
                }
            }
        }
        self.refills += 1;
        Ok(())
    }

    /// Remove `n` rows from the read end of the buffer.
    ///
    /// Returns `Ok(None)` once draining and empty. While draining the last
    /// batch may be short.
    pub fn sample(&mut self, n: usize) -> Result<Option<ActivationBatch>> {
        let fill = self.fill_level();
        if fill == 0 && self.draining {
            return Ok(None);
        }
        if fill < n && !self.draining {
            return Err(SaeError::Contract(format!(
                "sample of {n} rows with fill level {fill}"
            )));
        }
        let take = n.min(fill);
        let w = self.width();
        let start = fill - take;
        let data = self.rows.split_off(start * w);
        let valid = self.valid.split_off(start);
        let d = self.d_model;
        let all = Array2::from_shape_vec((take, w), data).expect("sized");
        let batch = if self.targets {
            ActivationBatch::with_targets(
                all.slice(ndarray::s![.., ..d]).to_owned(),
                all.slice(ndarray::s![.., d..]).to_owned(),
            )?
        } else {
            ActivationBatch::new(all)
        };
        batch.with_mask(valid).map(Some)
    }
}

impl<S: ActivationSource> ActivationSource for ShuffleBuffer<S> {
    fn d_model(&self) -> usize {
        self.d_model
    }

    fn has_targets(&self) -> bool {
        self.targets
    }

    fn next_batch(&mut self, n: usize) -> Result<Option<ActivationBatch>> {
        let n = n.min(self.capacity - self.refill_threshold()).max(1);
        if !self.draining && (self.fill_level() <= self.refill_threshold() || self.fill_level() < n)
        {
            self.refill()?;
        }
        self.sample(n)
    }
}
