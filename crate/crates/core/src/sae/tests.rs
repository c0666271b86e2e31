// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_params(d: usize, f: usize, seed: u64) -> SaeParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = SaeParams::zeros(d, f);
    p.w_enc.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    p.b_enc.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    p.w_dec.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    p.b_dec.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    p
}

fn random_vec(d: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_fn(d, |_| rng.random_range(-2.0..2.0))
}

fn cfg(d: usize, f: usize, k: usize, variant: Variant) -> SaeConfig {
    SaeConfig::new(d, f, k, variant, PositionKind::Autoencoder, 0.0).unwrap()
}

// Oracle: scalar triple loop.
fn loop_preact(p: &SaeParams<f64>, x: &Array1<f64>) -> Vec<f64> {
    let mut out = vec![0.0; p.n_features()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = p.b_enc[i];
        for j in 0..p.d_model() {
            acc += p.w_enc[[i, j]] * x[j];
        }
        *o = acc.max(0.0);
    }
    out
}

// Oracle: compute every weighted score, stable-sort descending, take the first k.
fn sort_topk_mask(pre: &[f64], norms: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<(usize, f64)> = pre
        .iter()
        .zip(norms)
        .map(|(p, n)| p * n)
        .enumerate()
        .collect();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut mask = vec![false; pre.len()];
    for (i, _) in order.into_iter().take(k) {
        mask[i] = true;
    }
    mask
}

fn loop_col_norms(p: &SaeParams<f64>) -> Vec<f64> {
    (0..p.n_features())
        .map(|i| {
            (0..p.d_model())
                .map(|j| p.w_dec[[j, i]].powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

#[test]
fn preactivate_zeroes_negatives() {
    let mut p = SaeParams::<f64>::zeros(2, 2);
    p.w_enc = Array2::eye(2);
    let pre = preactivate(&p, array![3.0, -1.0].view()).unwrap();
    assert_eq!(pre, array![3.0, 0.0]);
}

#[test]
fn preactivate_of_zero_input_with_zero_bias_is_zero() {
    let p = random_params(4, 8, 1);
    let mut p = p;
    p.b_enc.fill(0.0);
    let pre = preactivate(&p, Array1::zeros(4).view()).unwrap();
    assert!(pre.iter().all(|&v| v == 0.0));
}

#[test]
fn preactivate_matches_loop_oracle() {
    let p = random_params(8, 16, 2);
    let x = random_vec(8, 3);
    let got = preactivate(&p, x.view()).unwrap();
    for (g, o) in got.iter().zip(loop_preact(&p, &x)) {
        assert!(rel_close(*g, o, 1e-6), "{g} vs {o}");
    }
}

#[test]
fn preactivate_rejects_wrong_length() {
    let p = random_params(8, 16, 2);
    let err = preactivate(&p, Array1::zeros(7).view()).unwrap_err();
    assert!(matches!(
        err,
        crate::SaeError::DimensionMismatch {
            expected: 8,
            got: 7,
            ..
        }
    ));
}

#[test]
fn topk_plain_top1() {
    let m = norm_weighted_topk(
        array![1.0, 2.0, 3.0].view(),
        array![1.0, 1.0, 1.0].view(),
        1,
    )
    .unwrap();
    assert_eq!(m, vec![false, false, true]);
}

#[test]
fn topk_weighted_by_decoder_norm() {
    let pre = [1.0, 2.0, 3.0];
    let norms = [10.0, 1.0, 1.0];
    let m = norm_weighted_topk(
        array![1.0, 2.0, 3.0].view(),
        array![10.0, 1.0, 1.0].view(),
        1,
    )
    .unwrap();
    assert_eq!(m, sort_topk_mask(&pre, &norms, 1));
    assert_eq!(m, vec![true, false, false]);
}

#[test]
fn topk_tie_goes_to_lower_index() {
    let m = norm_weighted_topk(array![2.0, 2.0].view(), array![1.0, 1.0].view(), 1).unwrap();
    assert_eq!(m, sort_topk_mask(&[2.0, 2.0], &[1.0, 1.0], 1));
    assert_eq!(m, vec![true, false]);
}

#[test]
fn topk_rejects_k_above_width() {
    let err = norm_weighted_topk(array![1.0, 2.0].view(), array![1.0, 1.0].view(), 3).unwrap_err();
    assert!(matches!(err, crate::SaeError::Contract(_)));
}

#[test]
fn topk_with_k_equal_width_matches_vanilla() {
    let p = random_params(8, 16, 4);
    let x = random_vec(8, 5);
    let topk = encode(&cfg(8, 16, 16, Variant::TopK), &p, x.view()).unwrap();
    let vanilla = encode(&cfg(8, 16, 16, Variant::Vanilla), &p, x.view()).unwrap();
    assert_eq!(topk, vanilla);
}

#[test]
fn topk_encode_matches_sort_oracle() {
    for seed in 0..20 {
        let p = random_params(8, 16, 100 + seed);
        let x = random_vec(8, 200 + seed);
        let f = encode(&cfg(8, 16, 2, Variant::TopK), &p, x.view()).unwrap();
        let pre = loop_preact(&p, &x);
        let mask = sort_topk_mask(&pre, &loop_col_norms(&p), 2);
        for i in 0..16 {
            let expect = if mask[i] { pre[i] } else { 0.0 };
            assert!(rel_close(f.get(i), expect, 1e-9), "seed {seed} feature {i}");
        }
    }
}

#[test]
fn jumprelu_theta_zero_matches_vanilla_support() {
    let mut p = random_params(8, 16, 6);
    p.theta = Some(0.0);
    let x = random_vec(8, 7);
    let jr = encode(&cfg(8, 16, 3, Variant::JumpRelu), &p, x.view()).unwrap();
    let vanilla = encode(&cfg(8, 16, 3, Variant::Vanilla), &p, x.view()).unwrap();
    assert_eq!(jr.indices(), vanilla.indices());
}

#[test]
fn jumprelu_without_theta_is_config_error() {
    let p = random_params(8, 16, 6);
    let err = encode(
        &cfg(8, 16, 3, Variant::JumpRelu),
        &p,
        random_vec(8, 1).view(),
    )
    .unwrap_err();
    assert!(matches!(err, crate::SaeError::Config(_)));
}

#[test]
fn jumprelu_compares_norm_weighted_scores() {
    let mut p = SaeParams::<f64>::zeros(1, 2);
    p.w_enc = array![[1.0], [1.0]];
    p.w_dec = array![[3.0, 0.5]];
    p.theta = Some(1.0);
    let f = encode(&cfg(1, 2, 1, Variant::JumpRelu), &p, array![1.0].view()).unwrap();
    // scores (3.0, 0.5): only feature 0 clears the threshold, stored unweighted
    assert_eq!(f.indices(), &[0]);
    assert_eq!(f.values(), &[1.0]);
}

#[test]
fn decode_empty_is_bias() {
    let p = random_params(8, 16, 8);
    assert_eq!(decode(&p, &FeatureVector::new()).unwrap(), p.b_dec);
}

#[test]
fn decode_single_feature_is_scaled_column() {
    let p = random_params(8, 16, 8);
    let f = FeatureVector::from_pairs([(5, 2.5)]);
    let got = decode(&p, &f).unwrap();
    let expect = &p.w_dec.column(5) * 2.5 + &p.b_dec;
    for (a, b) in got.iter().zip(expect.iter()) {
        assert!(rel_close(*a, *b, 1e-12));
    }
}

#[test]
fn decode_matches_dense_matvec_oracle() {
    let p = random_params(8, 16, 9);
    let f = FeatureVector::from_pairs([(1, 0.7), (4, 1.3), (11, 0.2), (15, 2.0)]);
    let dense = f.to_dense(16);
    let got = decode(&p, &f).unwrap();
    for j in 0..8 {
        let mut acc = p.b_dec[j];
        for (i, v) in dense.iter().enumerate() {
            acc += p.w_dec[[j, i]] * v;
        }
        assert!(rel_close(got[j], acc, 1e-6));
    }
}

#[test]
fn decode_rejects_out_of_range_index() {
    let p = random_params(2, 4, 9);
    assert!(decode(&p, &FeatureVector::from_pairs([(4, 1.0)])).is_err());
}

#[test]
fn forward_with_zero_encoder_returns_decoder_bias() {
    let mut p = random_params(4, 8, 10);
    p.w_enc.fill(0.0);
    p.b_enc.fill(0.0);
    let x = p.b_dec.clone();
    let (f, x_hat) = forward(&cfg(4, 8, 2, Variant::TopK), &p, x.view()).unwrap();
    assert!(f.is_empty());
    assert_eq!(x_hat, x);
}

#[test]
fn forward_composes_encode_and_decode() {
    let p = random_params(6, 12, 11);
    let c = cfg(6, 12, 3, Variant::TopK);
    let x = random_vec(6, 12);
    let (f, x_hat) = forward(&c, &p, x.view()).unwrap();
    assert_eq!(f, encode(&c, &p, x.view()).unwrap());
    assert_eq!(x_hat, decode(&p, &f).unwrap());
}

#[test]
fn batch_path_equals_single_vector_path() {
    let p = random_params(8, 16, 13).cast::<f32>();
    let c = cfg(8, 16, 3, Variant::TopK);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let xs = Array2::from_shape_fn((32, 8), |_| rng.random_range(-2.0f32..2.0));
    let (codes, recon) = forward_batch(&c, &p, xs.view()).unwrap();
    for (n, row) in xs.rows().into_iter().enumerate() {
        let (f, x_hat) = forward(&c, &p, row).unwrap();
        let batch_f = FeatureVector::from_dense(codes.row(n).iter().copied());
        assert_eq!(batch_f.indices(), f.indices());
        for (a, b) in batch_f.values().iter().zip(f.values()) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
        }
        for (a, b) in recon.row(n).iter().zip(x_hat.iter()) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
        }
    }
}

#[test]
fn topk_nnz_is_k_or_positive_count() {
    let c = cfg(8, 16, 4, Variant::TopK);
    for seed in 0..30 {
        let p = random_params(8, 16, 300 + seed);
        let x = random_vec(8, 400 + seed);
        let positive = loop_preact(&p, &x).iter().filter(|&&v| v > 0.0).count();
        let f = encode(&c, &p, x.view()).unwrap();
        assert_eq!(f.nnz(), positive.min(4));
    }
}

proptest! {
    #[test]
    fn topk_mask_invariant_under_norm_rescaling(
        pre in proptest::collection::vec(0.0f64..5.0, 12),
        norms in proptest::collection::vec(0.1f64..3.0, 12),
        k in 1usize..=12,
        c in 0.01f64..100.0,
    ) {
        let scaled: Vec<f64> = norms.iter().map(|n| n * c).collect();
        let a = norm_weighted_topk(Array1::from(pre.clone()).view(), Array1::from(norms).view(), k).unwrap();
        let b = norm_weighted_topk(Array1::from(pre).view(), Array1::from(scaled).view(), k).unwrap();
        // rescaling can only reorder exact ties, which the index rule settles identically
        prop_assert_eq!(a.iter().filter(|&&m| m).count(), k);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn single_feature_reconstruction_is_homogeneous(
        seed in 0u64..1000,
        c in 0.1f64..10.0,
        feature in 0usize..12,
        value in 0.1f64..3.0,
    ) {
        let p = random_params(6, 12, seed);
        let mut q = p.clone();
        q.w_dec.column_mut(feature).mapv_inplace(|v| v * c);
        let a = decode(&p, &FeatureVector::from_pairs([(feature, value)])).unwrap();
        let b = decode(&q, &FeatureVector::from_pairs([(feature, value / c)])).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn sparse_decode_equals_dense(seed in 0u64..1000, density in 0.0f64..1.0) {
        let p = random_params(8, 16, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let dense: Vec<f64> = (0..16)
            .map(|_| if rng.random_bool(density) { rng.random_range(0.01..2.0) } else { 0.0 })
            .collect();
        let f = FeatureVector::from_dense(dense.iter().copied());
        let sparse = decode(&p, &f).unwrap();
        let full = p.w_dec.dot(&Array1::from(dense)) + &p.b_dec;
        for (x, y) in sparse.iter().zip(full.iter()) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(y.abs()).max(1e-12));
        }
    }
}
