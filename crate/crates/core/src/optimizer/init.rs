// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::real::Real;
use crate::sae::{PositionKind, SaeConfig, SaeParams};

fn kaiming_uniform<T: Real>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> ndarray::Array2<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    ndarray::Array2::from_shape_simple_fn((rows, cols), || T::lit(dist.sample(rng)))
}

/// Initial parameters for a run.
///
/// Decoder columns are Kaiming-uniform, then rescaled to norm `sqrt(2D/F)`.
/// Autoencoders start with `W_enc = W_dec^T`; transcoders draw an independent
/// Kaiming-uniform encoder. Both biases start at zero.
pub fn init_params<T: Real>(config: &SaeConfig, seed: u64) -> SaeParams<T> {
    let (d, f) = (config.d_model, config.n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = SaeParams::<T>::zeros(d, f);
    params.w_dec = kaiming_uniform(d, f, f, &mut rng);
    let target = T::lit((2.0 * d as f64 / f as f64).sqrt());
    for mut col in params.w_dec.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm > T::zero() {
            col.mapv_inplace(|v| v / norm * target);
        }
    }
    params.w_enc = match config.position_kind {
        PositionKind::Autoencoder => params.w_dec.t().as_standard_layout().into_owned(),
        PositionKind::Transcoder => kaiming_uniform(f, d, d, &mut rng),
    };
    params
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sae::{preactivate, Variant};
    use ndarray::Array1;

    #[test]
    fn column_norms_follow_expansion() {
        for (expansion, expected) in [(8usize, 0.5f64), (32, 0.25)] {
            let cfg = SaeConfig::topk(16, expansion, 4).unwrap();
            let p = init_params::<f64>(&cfg, 3);
            for n in p.decoder_col_norms() {
                assert!((n - expected).abs() < 1e-6, "{n}");
            }
        }
    }

    #[test]
    fn autoencoder_encoder_is_decoder_transpose() {
        let cfg = SaeConfig::topk(8, 4, 2).unwrap();
        let p = init_params::<f64>(&cfg, 1);
        assert_eq!(p.w_enc, p.w_dec.t());
        let x = Array1::from_shape_fn(8, |i| i as f64 - 3.5);
        let pre = preactivate(&p, x.view()).unwrap();
        let expect = p.w_dec.t().dot(&x).mapv(|v| v.max(0.0));
        // the two products may sum in different orders
        for (a, b) in pre.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn transcoder_encoder_is_independent() {
        let cfg = SaeConfig::new(8, 32, 2, Variant::TopK, PositionKind::Transcoder, 0.0).unwrap();
        let p = init_params::<f64>(&cfg, 1);
        assert_ne!(p.w_enc, p.w_dec.t());
        assert!(p.b_enc.iter().chain(p.b_dec.iter()).all(|&b| b == 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SaeConfig::topk(8, 4, 2).unwrap();
        assert_eq!(init_params::<f32>(&cfg, 9), init_params::<f32>(&cfg, 9));
        assert_ne!(init_params::<f32>(&cfg, 9), init_params::<f32>(&cfg, 10));
    }
}
