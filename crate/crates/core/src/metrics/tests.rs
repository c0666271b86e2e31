use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::activations::{ActivationBatch, MemorySource};
use crate::optimizer::init_params;
use crate::sae::{FeatureVector, PositionKind, Sae, SaeConfig, SaeParams, Variant};

fn random_x(n: usize, d: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0f32..1.0))
}

fn topk(d: usize, f: usize, k: usize) -> SaeConfig {
    SaeConfig::new(d, f, k, Variant::TopK, PositionKind::Autoencoder, 0.0).unwrap()
}

#[test]
fn explained_variance_closed_forms() {
    let x = random_x(20, 6, 1);
    assert_eq!(explained_variance(x.view(), x.view()).unwrap(), 1.0);
    assert_eq!(
        explained_variance(x.view(), Array2::zeros((20, 6)).view()).unwrap(),
        0.0
    );
    let neg = x.mapv(|v| -v);
    assert!((explained_variance(x.view(), neg.view()).unwrap() + 3.0).abs() < 1e-12);
}

#[test]
fn zero_rows_are_excluded_from_ev() {
    let mut x = random_x(5, 3, 2);
    x.row_mut(2).fill(0.0);
    let mut x_hat = x.clone();
    x_hat.row_mut(2).fill(9.0);
    assert_eq!(explained_variance(x.view(), x_hat.view()).unwrap(), 1.0);
    assert!(explained_variance(
        Array2::zeros((3, 3)).view(),
        x.slice(ndarray::s![..3, ..]).view()
    )
    .is_err());
}

#[test]
fn ev_and_mse_agree() {
    let (d, f) = (8, 32);
    let sae = Sae::new(topk(d, f, 3), init_params(&topk(d, f, 3), 3)).unwrap();
    let x = random_x(500, d, 4);
    let r = evaluate(
        &sae,
        &mut MemorySource::new(ActivationBatch::new(x.clone())),
        500,
        None,
    )
    .unwrap();
    let mean_sq: f64 = x.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / 500.0;
    let implied = 1.0 - r.mse * d as f64 / mean_sq;
    assert!((r.explained_variance - implied).abs() < 1e-9);
    assert!(r.explained_variance <= 1.0);
    assert_eq!(r.n_tokens, 500);
}

#[test]
fn l0_counts() {
    assert_eq!(l0_mean(&[]), 0.0);
    assert_eq!(l0_mean(&[FeatureVector::new(), FeatureVector::new()]), 0.0);
    // identity encoder on strictly positive inputs: every preactivation is positive
    let (d, k) = (10, 4);
    let mut p = SaeParams::<f32>::zeros(d, d);
    p.w_enc = Array2::eye(d);
    p.w_dec = Array2::eye(d);
    let sae = Sae::new(topk(d, d, k), p).unwrap();
    let x = random_x(300, d, 5).mapv(|v| v.abs() + 0.01);
    let r = evaluate(
        &sae,
        &mut MemorySource::new(ActivationBatch::new(x)),
        300,
        None,
    )
    .unwrap();
    assert_eq!(r.l0_mean, k as f64);
}

#[test]
fn evaluation_skips_invalid_rows() {
    let d = 4;
    let x = random_x(10, d, 6);
    let mask: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
    let batch = ActivationBatch::new(x).with_mask(mask).unwrap();
    let r = evaluate(
        &PassThrough { d_model: d },
        &mut MemorySource::new(batch),
        100,
        None,
    )
    .unwrap();
    assert_eq!(r.n_tokens, 5);
}

#[test]
fn pass_through_has_zero_delta() {
    let d = 16;
    let ev = LinearSoftmaxReadout::random(d, 10, 4.0, 7);
    let x = random_x(3000, d, 8);
    let r = evaluate(
        &PassThrough { d_model: d },
        &mut MemorySource::new(ActivationBatch::new(x)),
        3000,
        Some(&ev),
    )
    .unwrap();
    assert_eq!(r.delta_downstream_loss, Some(0.0));
    assert_eq!(r.explained_variance, 1.0);
}

#[test]
fn zero_output_sae_raises_loss() {
    let d = 16;
    let ev = LinearSoftmaxReadout::random(d, 10, 4.0, 9);
    let zero = Sae::new(topk(d, 32, 4), SaeParams::zeros(d, 32)).unwrap();
    let x = random_x(2000, d, 10);
    let r = evaluate(
        &zero,
        &mut MemorySource::new(ActivationBatch::new(x.clone())),
        2000,
        Some(&ev),
    )
    .unwrap();
    let delta = r.delta_downstream_loss.unwrap();
    assert!(delta > 0.0);
    // same inputs scaled identically on both sides: sign is unchanged
    for s in [0.1f32, 3.0, 10.0] {
        let r = evaluate(
            &zero,
            &mut MemorySource::new(ActivationBatch::new(&x * s)),
            2000,
            Some(&ev),
        )
        .unwrap();
        assert!(r.delta_downstream_loss.unwrap() > 0.0, "scale {s}");
    }
}

fn loop_recount(sae: &Sae, x: &Array2<f32>) -> Vec<u64> {
    let mut counts = vec![0u64; sae.config.n_features];
    for r in 0..x.nrows() {
        let row = x.slice(ndarray::s![r..r + 1, ..]).to_owned();
        let codes = sae.encode(&row).unwrap();
        for (i, &v) in codes.iter().enumerate() {
            if v != 0.0 {
                counts[i] += 1;
            }
        }
    }
    counts
}

#[test]
fn hugely_negative_bias_never_fires() {
    let (d, f) = (6, 24);
    let cfg = SaeConfig::new(d, f, 1, Variant::Vanilla, PositionKind::Autoencoder, 1e-3).unwrap();
    let mut p = init_params(&cfg, 11);
    p.b_enc = Array1::from_elem(f, -1e30);
    let sae = Sae::new(cfg, p).unwrap();
    let s = firing_stats(
        &sae,
        &mut MemorySource::new(ActivationBatch::new(random_x(400, d, 12))),
        400,
    )
    .unwrap();
    assert_eq!(s.inactive_fraction(), 1.0);
    assert!(s.health().inactive_warn);
    assert_eq!(s.histogram(4).never_fired, f as u64);
}

#[test]
fn k_equals_f_is_all_ultra_active() {
    let (d, f) = (6, 12);
    let cfg = topk(d, f, f);
    let mut p = init_params(&cfg, 13);
    p.b_enc = Array1::from_elem(f, 10.0);
    let sae = Sae::new(cfg, p).unwrap();
    let s = firing_stats(
        &sae,
        &mut MemorySource::new(ActivationBatch::new(random_x(500, d, 14))),
        500,
    )
    .unwrap();
    assert_eq!(s.ultra_active_fraction(), 1.0);
    assert!(s.health().ultra_active_warn);
}

#[test]
fn histogram_mass_and_recount() {
    let (d, f, k) = (8, 64, 3);
    let cfg = topk(d, f, k);
    let sae = Sae::new(cfg, init_params(&cfg, 15)).unwrap();
    let x = random_x(5000, d, 16);
    let s = firing_stats(
        &sae,
        &mut MemorySource::new(ActivationBatch::new(x.clone())),
        5000,
    )
    .unwrap();
    assert_eq!(s.counts, loop_recount(&sae, &x));
    assert_eq!(s.counts.iter().sum::<u64>(), (k * 5000) as u64);
    let h = s.histogram(5);
    assert_eq!(h.total(), f as u64);
    for (i, &c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.edges(i);
        let oracle = s
            .frequencies()
            .iter()
            .filter(|&&q| {
                q > 0.0
                    && q.log10() >= lo
                    && (q.log10() < hi || (i + 1 == h.counts.len() && q.log10() <= hi))
            })
            .count() as u64;
        assert_eq!(c, oracle, "bin {i}");
    }
    let inactive = s.counts.iter().filter(|&&c| c == 0).count() as f64 / f as f64;
    let ultra = s.counts.iter().filter(|&&c| c as f64 > 500.0).count() as f64 / f as f64;
    assert_eq!(s.inactive_fraction(), inactive);
    assert_eq!(s.ultra_active_fraction(), ultra);
}

#[test]
fn counts_ignore_order_and_merge_exactly() {
    let (d, f, k) = (5, 20, 2);
    let cfg = topk(d, f, k);
    let sae = Sae::new(cfg, init_params(&cfg, 17)).unwrap();
    let x = random_x(600, d, 18);
    let mut perm: Vec<usize> = (0..600).collect();
    perm.reverse();
    perm.swap(3, 400);
    let shuffled = x.select(ndarray::Axis(0), &perm);
    let a = firing_stats(
        &sae,
        &mut MemorySource::new(ActivationBatch::new(x.clone())),
        600,
    )
    .unwrap();
    let b = firing_stats(
        &sae,
        &mut MemorySource::new(ActivationBatch::new(shuffled)),
        600,
    )
    .unwrap();
    assert_eq!(a, b);
    let mut src = MemorySource::new(ActivationBatch::new(x));
    let mut first = firing_stats(&sae, &mut src, 250).unwrap();
    let second = firing_stats(&sae, &mut src, 350).unwrap();
    first.merge(&second).unwrap();
    assert_eq!(first, a);
}

#[test]
fn health_thresholds_are_strict() {
    let w = 100_000;
    let at = |inactive: usize, ultra: usize| {
        let mut c = vec![50u64; 100];
        c[..inactive].fill(0);
        c[inactive..inactive + ultra].fill(10_001);
        FiringStats::from_counts(c, w).unwrap().health()
    };
    assert!(!at(10, 0).inactive_warn);
    assert!(at(11, 0).inactive_warn);
    assert!(!at(0, 2).ultra_active_warn);
    assert!(at(0, 3).ultra_active_warn);
    assert!(FiringStats::from_counts(vec![w + 1], w).is_err());
}

#[test]
fn records_round_trip() {
    let r = EvalReport {
        l0_mean: 5.0,
        explained_variance: 0.123456789,
        mse: 1e-7,
        delta_downstream_loss: Some(-0.5),
        n_tokens: 42,
        ev_excluded_rows: 0,
    };
    let text: String = r.records("L3R").iter().map(|m| format!("{m}\n")).collect();
    assert!(text.starts_with("l0_mean\t5\t42\tL3R\n"));
    assert_eq!(parse_records(&text).unwrap(), r.records("L3R"));
}
