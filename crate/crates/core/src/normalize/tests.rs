use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::activations::{MemorySource, SyntheticDictionary, SyntheticSource};
use crate::sae::{encode_batch, forward_batch};

fn gauss(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample::<f64, _>(StandardNormal))
}

fn random_params(d: usize, f: usize, seed: u64) -> SaeParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = SaeParams::<f64>::zeros(d, f);
    p.w_enc = gauss(&mut rng, (f, d));
    p.w_dec = gauss(&mut rng, (d, f)) * 0.3;
    p.b_enc = Array1::from_shape_simple_fn(f, || rng.sample::<f64, _>(StandardNormal) * 0.1);
    p.b_dec = Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal));
    p
}

fn rows_with_norm(n: usize, d: usize, norm: f64, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gauss(&mut rng, (n, d));
    for mut r in x.rows_mut() {
        let len = r.dot(&r).sqrt();
        r.mapv_inplace(|v| v / len * norm);
    }
    x.mapv(|v| v as f32)
}

fn max_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

#[test]
fn unit_scale_stream_gives_unit_factor() {
    let d = 16;
    let x = rows_with_norm(200, d, (d as f64).sqrt(), 1);
    let f = estimate_norm_factors(&mut MemorySource::new(ActivationBatch::new(x)), 200).unwrap();
    assert!((f.s_in - 1.0).abs() < 1e-6);
    assert_eq!(f.s_in, f.s_out);
}

#[test]
fn doubled_norm_gives_half() {
    let d = 9;
    let x = rows_with_norm(100, d, 2.0 * (d as f64).sqrt(), 2);
    let f = estimate_norm_factors(&mut MemorySource::new(ActivationBatch::new(x)), 100).unwrap();
    assert!((f.s_in - 0.5).abs() < 1e-6);
}

#[test]
fn mixed_stream_matches_two_pass_oracle() {
    let (n, d) = (300, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = gauss(&mut rng, (n, d)).mapv(|v| (v * 3.0) as f32);
    let y = gauss(&mut rng, (n, d)).mapv(|v| (v * 0.2) as f32);
    let mask: Vec<bool> = (0..n).map(|i| i % 5 != 0).collect();
    // oracle: pass one collects the valid rows, pass two averages their norms
    let oracle = |m: &Array2<f32>| {
        let kept: Vec<Vec<f64>> = (0..n)
            .filter(|&i| mask[i])
            .take(150)
            .map(|i| m.row(i).iter().map(|&v| v as f64).collect())
            .collect();
        let mut total = 0.0;
        for r in &kept {
            let mut s = 0.0;
            for v in r {
                s += v * v;
            }
            total += s.sqrt();
        }
        (d as f64).sqrt() / (total / kept.len() as f64)
    };
    let batch = ActivationBatch::with_targets(x.clone(), y.clone())
        .unwrap()
        .with_mask(mask.clone())
        .unwrap();
    let f = estimate_norm_factors(&mut MemorySource::new(batch), 150).unwrap();
    assert!((f.s_in - oracle(&x)).abs() / oracle(&x) < 1e-6);
    assert!((f.s_out - oracle(&y)).abs() / oracle(&y) < 1e-6);
}

#[test]
fn all_zero_stream_is_an_error() {
    let x = Array2::<f32>::zeros((10, 4));
    let err =
        estimate_norm_factors(&mut MemorySource::new(ActivationBatch::new(x)), 10).unwrap_err();
    assert!(matches!(err, SaeError::ZeroMeanNorm { .. }));
}

#[test]
fn apply_norm_identity_and_inverse() {
    let x = rows_with_norm(20, 5, 3.0, 4).mapv(f64::from);
    let b = ActivationBatch::new(x.clone());
    assert_eq!(apply_norm(&b, &NormFactors::IDENTITY), b);
    let f = NormFactors::new(0.37, 0.37).unwrap();
    let back = apply_norm(
        &apply_norm(&b, &f),
        &NormFactors::new(1.0 / 0.37, 1.0 / 0.37).unwrap(),
    );
    for (a, o) in back.x_in.iter().zip(&x) {
        assert!((a - o).abs() <= 1e-7 * o.abs().max(1.0));
    }
}

#[test]
fn scaled_stream_has_mean_norm_sqrt_d() {
    let dict = SyntheticDictionary::default_with_seed(11);
    let d = dict.d_model();
    let mut train = SyntheticSource::new(dict.clone(), 1);
    let f = estimate_norm_factors(&mut train, 20_000).unwrap();
    let mut held_out = SyntheticSource::new(dict, 2);
    let b = collect_valid(&mut held_out, 20_000).unwrap().unwrap();
    let scaled = apply_norm(&b, &f);
    let mean = row_norm_sum(&scaled.x_in) / scaled.len() as f64;
    let target = (d as f64).sqrt();
    assert!(
        (mean - target).abs() / target < 0.02,
        "mean norm {mean} vs {target}"
    );
}

#[test]
fn fold_with_unit_factors_is_identity() {
    let p = random_params(4, 8, 5);
    assert_eq!(fold_norm_into_params(&p, &NormFactors::IDENTITY), p);
}

#[test]
fn fold_with_equal_factors_halves_biases() {
    let p = random_params(4, 8, 6);
    let q = fold_norm_into_params(&p, &NormFactors::new(2.0, 2.0).unwrap());
    assert_eq!(q.w_dec, p.w_dec);
    assert_eq!(q.w_enc, p.w_enc);
    assert_eq!(q.b_dec, &p.b_dec / 2.0);
    assert_eq!(q.b_enc, &p.b_enc / 2.0);
}

#[test]
fn folded_forward_matches_normalized_forward() {
    let (d, f, k) = (6, 24, 4);
    for (seed, s_in, s_out) in [(7, 0.3, 0.3), (8, 2.5, 0.7), (9, 0.05, 11.0)] {
        for kind in [PositionKind::Autoencoder, PositionKind::Transcoder] {
            if kind == PositionKind::Autoencoder && s_in != s_out {
                continue;
            }
            let cfg = SaeConfig::new(d, f, k, Variant::TopK, kind, 0.0).unwrap();
            let p = random_params(d, f, seed);
            let factors = NormFactors::new(s_in, s_out).unwrap();
            let x = gauss(&mut ChaCha8Rng::seed_from_u64(seed + 100), (32, d)) * 4.0;
            let (_, normed) = forward_batch(&cfg, &p, (&x * s_in).view()).unwrap();
            let expect = normed / s_out;
            let folded = fold_norm_into_params(&p, &factors);
            let (_, got) = forward_batch(&cfg, &folded, x.view()).unwrap();
            assert!(max_rel(&got, &expect) < 1e-6, "seed {seed}");
        }
    }
}

#[test]
fn unitize_is_identity_on_unit_columns() {
    let mut p = random_params(5, 10, 10);
    for mut c in p.w_dec.columns_mut() {
        let n = c.dot(&c).sqrt();
        c.mapv_inplace(|v| v / n);
    }
    // exact unit norms are what the identity short-circuit keys on
    let q = unitize_decoder(&p).unwrap();
    for i in 0..10 {
        if p.w_dec.column(i).dot(&p.w_dec.column(i)).sqrt() == 1.0 {
            assert_eq!(q.w_dec.column(i), p.w_dec.column(i));
            assert_eq!(q.w_enc.row(i), p.w_enc.row(i));
            assert_eq!(q.b_enc[i], p.b_enc[i]);
        }
    }
    for (a, b) in q.w_dec.iter().zip(&p.w_dec) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn unitize_preserves_forward_and_mask() {
    let (d, f, k) = (8, 32, 5);
    let cfg = SaeConfig::new(d, f, k, Variant::TopK, PositionKind::Autoencoder, 0.0).unwrap();
    for seed in 0..5 {
        let p = random_params(d, f, 20 + seed);
        let q = unitize_decoder(&p).unwrap();
        let x = gauss(&mut ChaCha8Rng::seed_from_u64(40 + seed), (50, d));
        let (c0, r0) = forward_batch(&cfg, &p, x.view()).unwrap();
        let (c1, r1) = forward_batch(&cfg, &q, x.view()).unwrap();
        assert!(max_rel(&r1, &r0) < 1e-5);
        let mask = |c: &Array2<f64>| c.mapv(|v| v > 0.0);
        assert_eq!(mask(&c0), mask(&c1));
        for n in q.decoder_col_norms() {
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn dead_columns_are_listed() {
    let mut p = random_params(4, 6, 30);
    p.w_dec.column_mut(1).fill(0.0);
    p.w_dec.column_mut(4).fill(0.0);
    match unitize_decoder(&p) {
        Err(SaeError::DeadColumns { indices }) => assert_eq!(indices, vec![1, 4]),
        other => panic!("expected dead columns, got {other:?}"),
    }
}

/// Identity encoder/decoder over `D = F` and tokens with exactly `k`
/// coordinates in `[1, 2)`, the rest zero.
fn degenerate(
    n: usize,
    f: usize,
    k: usize,
    seed: u64,
) -> (SaeConfig, SaeParams<f32>, ActivationBatch) {
    let cfg = SaeConfig::new(f, f, k, Variant::TopK, PositionKind::Autoencoder, 0.0).unwrap();
    let mut p = SaeParams::<f32>::zeros(f, f);
    p.w_enc = Array2::eye(f);
    p.w_dec = Array2::eye(f);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::<f32>::zeros((n, f));
    for mut r in x.rows_mut() {
        let idx = rand::seq::index::sample(&mut rng, f, k);
        for i in idx {
            r[i] = rng.random_range(1.0..2.0);
        }
    }
    (cfg, p, ActivationBatch::new(x))
}

fn mean_l0(cfg: &SaeConfig, p: &SaeParams<f32>, x: &Array2<f32>) -> f64 {
    let c = encode_batch(cfg, p, x.view(), cfg.k).unwrap();
    c.iter().filter(|&&v| v > 0.0).count() as f64 / x.nrows() as f64
}

#[test]
fn degenerate_stream_calibrates_exactly() {
    let (mut cfg, mut p, b) = degenerate(10_000, 12, 3, 31);
    let theta = calibrate_jumprelu(
        &mut cfg,
        &mut p,
        &mut MemorySource::new(b.clone()),
        3,
        10_000,
    )
    .unwrap();
    assert!(theta > 0.0 && theta < 1.0, "theta {theta}");
    assert_eq!(cfg.variant, Variant::JumpRelu);
    assert_eq!(p.theta, Some(theta));
    assert_eq!(mean_l0(&cfg, &p, &b.x_in), 3.0);
}

#[test]
fn too_few_positives_is_unreachable() {
    let (_, p, b) = degenerate(200, 10, 2, 32);
    let err = calibrate_threshold(&p, &mut MemorySource::new(b), 3, 200).unwrap_err();
    assert!(matches!(
        err,
        SaeError::UnreachableSparsity {
            needed: 600,
            available: 400
        }
    ));
}

#[test]
fn calibration_needs_enough_tokens() {
    let (mut cfg, mut p, b) = degenerate(100, 6, 2, 33);
    let err = calibrate_jumprelu(&mut cfg, &mut p, &mut MemorySource::new(b), 2, 100).unwrap_err();
    assert!(matches!(err, SaeError::Contract(_)));
    assert_eq!(cfg.variant, Variant::TopK);
}

#[test]
fn self_consistent_and_monotone_on_dense_stream() {
    let (d, f, k, n) = (8, 64, 6, 10_000);
    let cfg = SaeConfig::new(d, f, k, Variant::TopK, PositionKind::Autoencoder, 0.0).unwrap();
    let p = unitize_decoder(&random_params(d, f, 34).cast()).unwrap();
    let x = gauss(&mut ChaCha8Rng::seed_from_u64(35), (n, d)).mapv(|v| v as f32);
    let src = ActivationBatch::new(x.clone());
    let (mut jcfg, mut jp) = (cfg, p.clone());
    calibrate_jumprelu(&mut jcfg, &mut jp, &mut MemorySource::new(src), k, n).unwrap();
    let l0 = mean_l0(&jcfg, &jp, &x);
    assert!((l0 - k as f64).abs() <= 1.0, "mean L0 {l0}");
    let mut prev = f64::INFINITY;
    for t in [0.0f32, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0] {
        jp.theta = Some(t);
        let l = mean_l0(&jcfg, &jp, &x);
        assert!(l <= prev);
        prev = l;
    }
}
