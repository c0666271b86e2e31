// SPDX-License-Identifier: MIT OR Apache-2.0

//! Shared oracles for the integration tests. Nothing here calls the crate's
//! forward math: losses are recomputed with plain loops.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saekit::activations::{ActivationBatch, ActivationSource};
use saekit::optimizer::gradients;
use saekit::sae::{PositionKind, SaeConfig, SaeParams, Variant};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Preactivations and TopK gaps closer than this count as degenerate.
pub const KINK_MARGIN: f64 = 1e-3;

pub struct GradInstance {
    pub config: SaeConfig,
    pub params: SaeParams<f64>,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

/// Random small problem: D <= 8, F <= 16, K <= 4, a handful of rows.
pub fn grad_instance(seed: u64, variant: Variant, kind: PositionKind) -> GradInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=8);
    let f = rng.random_range(d + 1..=16);
    let k = rng.random_range(1..=4usize).min(f - 1);
    let n = rng.random_range(2..=5);
    let l1 = if variant == Variant::Vanilla { 0.2 } else { 0.0 };
    let k = if variant == Variant::Vanilla { f } else { k };
    let config = SaeConfig::new(d, f, k, variant, kind, l1).unwrap();
    let mut params = SaeParams::zeros(d, f);
    params.w_enc.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    params.b_enc.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    params.w_dec.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    params.b_dec.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.5..1.5));
    let y = match kind {
        PositionKind::Autoencoder => x.clone(),
        PositionKind::Transcoder => Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.5..1.5)),
    };
    GradInstance { config, params, x, y }
}

fn encoder_rows(inst: &GradInstance, p: &SaeParams<f64>, r: usize) -> Vec<f64> {
    let (d, f) = (inst.config.d_model, inst.config.n_features);
    (0..f)
        .map(|i| p.b_enc[i] + (0..d).map(|j| p.w_enc[[i, j]] * inst.x[[r, j]]).sum::<f64>())
        .collect()
}

fn col_norm(p: &SaeParams<f64>, i: usize) -> f64 {
    p.w_dec.column(i).iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// MSE over all elements plus the L1 term for vanilla, by explicit loops.
pub fn loop_loss(inst: &GradInstance, p: &SaeParams<f64>) -> f64 {
    let (d, f, k) = (inst.config.d_model, inst.config.n_features, inst.config.k);
    let n = inst.x.nrows();
    let (mut sq, mut l1) = (0.0, 0.0);
    for r in 0..n {
        let mut act: Vec<f64> = encoder_rows(inst, p, r).into_iter().map(|v| v.max(0.0)).collect();
        if inst.config.variant == Variant::TopK {
            let mut order: Vec<usize> = (0..f).collect();
            order.sort_by(|&a, &b| (act[b] * col_norm(p, b)).total_cmp(&(act[a] * col_norm(p, a))));
            for &i in &order[k..] {
                act[i] = 0.0;
            }
        }
        l1 += act.iter().sum::<f64>();
        for j in 0..d {
            let recon = p.b_dec[j] + (0..f).map(|i| p.w_dec[[j, i]] * act[i]).sum::<f64>();
            sq += (recon - inst.y[[r, j]]).powi(2);
        }
    }
    sq / (n * d) as f64 + inst.config.l1_coeff * l1 / n as f64
}

/// Every preactivation away from zero and the TopK cut clearly separated.
pub fn non_degenerate(inst: &GradInstance) -> bool {
    let (f, k) = (inst.config.n_features, inst.config.k);
    (0..inst.x.nrows()).all(|r| {
        let raw = encoder_rows(inst, &inst.params, r);
        if raw.iter().any(|v| v.abs() < KINK_MARGIN) {
            return false;
        }
        if inst.config.variant != Variant::TopK || k >= f {
            return true;
        }
        let mut s: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(i, v)| v.max(0.0) * col_norm(&inst.params, i))
            .collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s[k - 1] - s[k] >= KINK_MARGIN
    })
}

pub fn batch_of(inst: &GradInstance) -> ActivationBatch<f64> {
    match inst.config.position_kind {
        PositionKind::Autoencoder => ActivationBatch::new(inst.x.clone()),
        PositionKind::Transcoder => ActivationBatch::with_targets(inst.x.clone(), inst.y.clone()).unwrap(),
    }
}

/// Compare every analytic gradient entry against central differences.
/// Returns the worst relative error, or a description of the first miss.
pub fn check_gradients(inst: &GradInstance) -> Result<f64, String> {
    let analytic = gradients(&inst.config, &inst.params, &batch_of(inst), inst.config.k)
        .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    macro_rules! fd {
        ($field:ident) => {
            for (idx, &g) in analytic.grads.$field.indexed_iter() {
                let mut plus = inst.params.clone();
                plus.$field[idx] += FD_STEP;
                let mut minus = inst.params.clone();
                minus.$field[idx] -= FD_STEP;
                let num = (loop_loss(inst, &plus) - loop_loss(inst, &minus)) / (2.0 * FD_STEP);
                let scale = g.abs().max(num.abs());
                let err = (g - num).abs();
                if err > FD_REL_TOL * scale + 1e-9 {
                    return Err(format!("{} {:?}: analytic {g} numeric {num}", stringify!($field), idx));
                }
                if scale > 1e-9 {
                    worst = worst.max(err / scale);
                }
            }
        };
    }
    fd!(w_enc);
    fd!(b_enc);
    fd!(w_dec);
    fd!(b_dec);
    Ok(worst)
}

/// Emits rows `[id, 0, ...]` with consecutive ids, in order.
pub struct CountingProducer {
    pub next: u64,
    pub total: u64,
    pub d: usize,
}

impl ActivationSource for CountingProducer {
    fn d_model(&self) -> usize {
        self.d
    }

    fn has_targets(&self) -> bool {
        false
    }

    fn next_batch(&mut self, n: usize) -> saekit::Result<Option<ActivationBatch>> {
        let left = self.total - self.next;
        if left == 0 {
            return Ok(None);
        }
        let take = (n as u64).min(left) as usize;
        let mut x = Array2::zeros((take, self.d));
        for r in 0..take {
            x[[r, 0]] = (self.next + r as u64) as f32;
        }
        self.next += take as u64;
        Ok(Some(ActivationBatch::new(x)))
    }
}
