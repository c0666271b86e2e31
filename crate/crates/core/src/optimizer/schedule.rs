// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Result, SaeError};
use crate::sae::SaeConfig;

pub const DEFAULT_BASE_LR: f64 = 8e-4;
pub const DEFAULT_DECAY_FRACTION: f64 = 0.2;
pub const DEFAULT_K_ANNEAL_FRACTION: f64 = 0.1;
const MAX_WARMUP_STEPS: usize = 10_000;

/// Step counts and learning-rate / K annealing curves for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub total_steps: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    /// Fraction of the run, at the end, over which the LR decays linearly to zero.
    pub decay_fraction: f64,
    /// Fraction of the run, at the start, over which K anneals from D down to K.
    pub k_anneal_fraction: f64,
    pub batch_size: usize,
}

impl TrainSchedule {
    /// Defaults: LR 8e-4, warmup `min(10000, total/10)`, 20% decay, 10% K-annealing.
    pub fn new(total_steps: usize, batch_size: usize) -> Self {
        Self {
            total_steps,
            base_lr: DEFAULT_BASE_LR,
            warmup_steps: default_warmup(total_steps),
            decay_fraction: DEFAULT_DECAY_FRACTION,
            k_anneal_fraction: DEFAULT_K_ANNEAL_FRACTION,
            batch_size,
        }
    }

    pub fn without_k_annealing(mut self) -> Self {
        self.k_anneal_fraction = 0.0;
        self
    }

    pub fn decay_steps(&self) -> usize {
        (self.decay_fraction * self.total_steps as f64).round() as usize
    }

    pub fn anneal_steps(&self) -> usize {
        (self.k_anneal_fraction * self.total_steps as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_owned());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            problems.push(format!("base_lr must be positive (got {})", self.base_lr));
        }
        if !(0.0..=1.0).contains(&self.decay_fraction) {
            problems.push(format!(
                "decay_fraction must lie in [0, 1] (got {})",
                self.decay_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.k_anneal_fraction) {
            problems.push(format!(
                "k_anneal_fraction must lie in [0, 1] (got {})",
                self.k_anneal_fraction
            ));
        }
        if self.warmup_steps + self.decay_steps() > self.total_steps {
            problems.push(format!(
                "warmup ({}) plus decay window ({}) exceeds total_steps ({})",
                self.warmup_steps,
                self.decay_steps(),
                self.total_steps
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SaeError::Config(problems.join("; ")))
        }
    }
}

pub fn default_warmup(total_steps: usize) -> usize {
    (total_steps / 10).min(MAX_WARMUP_STEPS)
}

/// Learning rate at `step`: linear warmup from 0, plateau, linear decay to 0.
pub fn lr_at(step: usize, schedule: &TrainSchedule) -> f64 {
    let total = schedule.total_steps;
    let step = step.min(total);
    let warmup = schedule.warmup_steps;
    let decay_start = total - schedule.decay_steps().min(total);
    if step < warmup {
        schedule.base_lr * step as f64 / warmup as f64
    } else if step < decay_start || total == decay_start {
        schedule.base_lr
    } else {
        schedule.base_lr * (total - step) as f64 / (total - decay_start) as f64
    }
}

/// Active-feature count at `step`: log-linear from `D` to `K` over the anneal
/// window, clamped to `[K, F]`, then `K`.
pub fn k_at(step: usize, schedule: &TrainSchedule, config: &SaeConfig) -> usize {
    let anneal = schedule.anneal_steps();
    let k = config.k;
    if anneal == 0 || step >= anneal {
        return k;
    }
    let t = step as f64 / anneal as f64;
    let log_k = (1.0 - t) * (config.d_model as f64).ln() + t * (k as f64).ln();
    (log_k.exp().round() as usize).clamp(k, config.n_features)
}
