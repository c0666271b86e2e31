// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{ArrayView2, Axis};

use super::{Autoencoder, MetricRecord};
use crate::activations::{collect_valid, ActivationSource};
use crate::error::{check_dim, Result, SaeError};

/// Features firing on more than this fraction of tokens are ultra-active.
pub const ULTRA_ACTIVE_FREQUENCY: f64 = 0.1;
/// Warn when more than this fraction of features never fired.
pub const INACTIVE_WARN_FRACTION: f64 = 0.10;
/// Warn when more than this fraction of features are ultra-active.
pub const ULTRA_ACTIVE_WARN_FRACTION: f64 = 0.02;

const CHUNK: usize = 4096;

/// Per-feature fire counts over a window of tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiringStats {
    pub counts: Vec<u64>,
    pub window_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiringHealth {
    pub inactive_fraction: f64,
    pub ultra_active_fraction: f64,
    pub inactive_warn: bool,
    pub ultra_active_warn: bool,
}

impl FiringHealth {
    pub fn is_healthy(&self) -> bool {
        !self.inactive_warn && !self.ultra_active_warn
    }
}

/// log10-binned firing frequencies. Never-fired features sit in their own
/// bucket so the total mass is always `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyHistogram {
    /// Lower edge of the first bin, in log10 units.
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub never_fired: u64,
}

impl FrequencyHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.never_fired
    }

    /// `(lower, upper)` edges of bin `i` in log10 units.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let lo = self.lo + i as f64 * self.bin_width;
        (lo, lo + self.bin_width)
    }
}

impl FiringStats {
    pub fn new(n_features: usize) -> Self {
        Self {
            counts: vec![0; n_features],
            window_tokens: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>, window_tokens: u64) -> Result<Self> {
        if let Some(&c) = counts.iter().find(|&&c| c > window_tokens) {
            return Err(SaeError::Contract(format!(
                "count {c} exceeds window of {window_tokens} tokens"
            )));
        }
        Ok(Self {
            counts,
            window_tokens,
        })
    }

    pub fn n_features(&self) -> usize {
        self.counts.len()
    }

    /// Count nonzero entries of an `N x F` code matrix.
    pub fn add_codes(&mut self, codes: ArrayView2<f32>) -> Result<()> {
        check_dim("code columns", self.counts.len(), codes.ncols())?;
        for row in codes.axis_iter(Axis(0)) {
            for (c, &v) in self.counts.iter_mut().zip(row) {
                *c += u64::from(v != 0.0);
            }
        }
        self.window_tokens += codes.nrows() as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        check_dim("feature count", self.counts.len(), other.counts.len())?;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.window_tokens += other.window_tokens;
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let w = self.window_tokens.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / w).collect()
    }

    pub fn inactive_fraction(&self) -> f64 {
        self.fraction(|c| c == 0)
    }

    pub fn ultra_active_fraction(&self) -> f64 {
        let w = self.window_tokens as f64;
        self.fraction(|c| c as f64 > ULTRA_ACTIVE_FREQUENCY * w)
    }

    fn fraction(&self, pred: impl Fn(u64) -> bool) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().filter(|&&c| pred(c)).count() as f64 / self.counts.len() as f64
    }

    pub fn health(&self) -> FiringHealth {
        let inactive = self.inactive_fraction();
        let ultra = self.ultra_active_fraction();
        FiringHealth {
            inactive_fraction: inactive,
            ultra_active_fraction: ultra,
            inactive_warn: inactive > INACTIVE_WARN_FRACTION,
            ultra_active_warn: ultra > ULTRA_ACTIVE_WARN_FRACTION,
        }
    }

    /// Histogram of `log10(frequency)` from `log10(1 / window)` (rounded
    /// down) to 0, with `bins_per_decade` bins per power of ten.
    pub fn histogram(&self, bins_per_decade: usize) -> FrequencyHistogram {
        let bins_per_decade = bins_per_decade.max(1);
        let decades = (self.window_tokens.max(1) as f64).log10().ceil().max(1.0);
        let n_bins = decades as usize * bins_per_decade;
        let width = 1.0 / bins_per_decade as f64;
        let mut hist = FrequencyHistogram {
            lo: -decades,
            bin_width: width,
            counts: vec![0; n_bins],
            never_fired: 0,
        };
        for f in self.frequencies() {
            if f == 0.0 {
                hist.never_fired += 1;
                continue;
            }
            let pos = ((f.log10() + decades) / width).floor();
            let bin = (pos.max(0.0) as usize).min(n_bins - 1);
            hist.counts[bin] += 1;
        }
        hist
    }

    pub fn records(&self, source: &str) -> Vec<MetricRecord> {
        let h = self.health();
        let w = self.window_tokens;
        vec![
            MetricRecord::new("inactive_fraction", h.inactive_fraction, w, source),
            MetricRecord::new("ultra_active_fraction", h.ultra_active_fraction, w, source),
            MetricRecord::new(
                "inactive_warn",
                f64::from(u8::from(h.inactive_warn)),
                w,
                source,
            ),
            MetricRecord::new(
                "ultra_active_warn",
                f64::from(u8::from(h.ultra_active_warn)),
                w,
                source,
            ),
        ]
    }
}

/// Fire counts of `model` over the next `window_tokens` valid tokens.
pub fn firing_stats(
    model: &dyn Autoencoder,
    source: &mut dyn ActivationSource,
    window_tokens: usize,
) -> Result<FiringStats> {
    check_dim("source D", model.d_model(), source.d_model())?;
    let mut stats = FiringStats::new(model.n_features());
    while (stats.window_tokens as usize) < window_tokens {
        let want = (window_tokens - stats.window_tokens as usize).min(CHUNK);
        let Some(batch) = collect_valid(source, want)? else {
            break;
        };
        let (codes, _) = model.run(&batch.x_in)?;
        stats.add_codes(codes.view())?;
    }
    Ok(stats)
}
