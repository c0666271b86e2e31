// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoder geometry: cosine similarity between decoder columns, neighbor
//! queries, cross-SAE matching and the Johnson-Lindenstrauss baseline.
//!
//! Large similarity scans run as blocked `f32` matrix products (at most
//! `block` rows per side), so an `F x F` scan never materializes more than a
//! `block x block` tile per worker.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{check_dim, Result, SaeError};
use crate::metrics::MetricRecord;
use crate::real::Real;
use crate::sae::SaeParams;

pub const DEFAULT_BLOCK: usize = 4096;
const ZERO_NORM: f64 = 1e-12;

/// `sqrt(12 ln F / D)`: above this cosine, a pair of directions is unlikely
/// to be a chance alignment among `F` random directions in `D` dimensions.
///
/// The bound treats inner products of random unit vectors as if they were
/// cosines of the embedded points, which is an approximation.
pub fn jl_epsilon(n_features: f64, d_model: f64) -> f64 {
    (12.0 * n_features.ln() / d_model).sqrt()
}

fn column_f64<T: Real>(p: &SaeParams<T>, i: usize) -> Result<Array1<f64>> {
    if i >= p.n_features() {
        return Err(SaeError::DimensionMismatch {
            what: "feature index",
            expected: p.n_features(),
            got: i,
        });
    }
    Ok(p.w_dec.column(i).mapv(|v| v.as_f64()))
}

/// Cosine between column `i` of `a` and column `j` of `b`.
pub fn decoder_cosine<T: Real>(a: &SaeParams<T>, i: usize, b: &SaeParams<T>, j: usize) -> Result<f64> {
    check_dim("decoder D", a.d_model(), b.d_model())?;
    let (u, v) = (column_f64(a, i)?, column_f64(b, j)?);
    let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Err(SaeError::DeadColumns {
            indices: if nu < ZERO_NORM { vec![i] } else { vec![j] },
        });
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Decoder columns as unit-norm rows (`F x D`, `f32`). Zero columns are an
/// error.
pub fn unit_rows<T: Real>(p: &SaeParams<T>) -> Result<Array2<f32>> {
    let mut rows = p.w_dec.t().mapv(|v| v.as_f64() as f32);
    let mut dead = Vec::new();
    for (i, mut r) in rows.axis_iter_mut(Axis(0)).enumerate() {
        let n = r.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        if n < ZERO_NORM {
            dead.push(i);
        } else {
            r.mapv_inplace(|v| (f64::from(v) / n) as f32);
        }
    }
    if !dead.is_empty() {
        return Err(SaeError::DeadColumns { indices: dead });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborResult {
    pub query: usize,
    /// `(feature, cosine)`, cosine descending, ties by index.
    pub neighbors: Vec<(usize, f64)>,
    /// Label of the SAE the neighbors come from.
    pub source: String,
    /// JL threshold for the neighbor SAE's `(F, D)`, for judging significance.
    pub jl_epsilon: f64,
}

impl NeighborResult {
    /// One `neighbor_cosine` record per neighbor; the source field is
    /// `label:query:neighbor`.
    pub fn records(&self) -> Vec<MetricRecord> {
        self.neighbors
            .iter()
            .map(|&(j, c)| MetricRecord::new("neighbor_cosine", c, 0, format!("{}:{}:{}", self.source, self.query, j)))
            .collect()
    }
}

/// The `m` columns of `b` most similar to column `i` of `a`. When `a` and
/// `b` are the same object the query itself is skipped.
pub fn nearest_features<T: Real>(
    a: &SaeParams<T>,
    i: usize,
    b: &SaeParams<T>,
    m: usize,
    label: &str,
) -> Result<NeighborResult> {
    check_dim("decoder D", a.d_model(), b.d_model())?;
    let same = std::ptr::eq(a, b);
    let available = b.n_features() - usize::from(same);
    if m > available {
        return Err(SaeError::Contract(format!("asked for {m} neighbors, only {available} available")));
    }
    let q = column_f64(a, i)?;
    let qn = q.dot(&q).sqrt();
    if qn < ZERO_NORM {
        return Err(SaeError::DeadColumns { indices: vec![i] });
    }
    let mut scored = Vec::with_capacity(b.n_features());
    let mut dead = Vec::new();
    for j in 0..b.n_features() {
        if same && j == i {
            continue;
        }
        let v = b.w_dec.column(j).mapv(|x| x.as_f64());
        let vn = v.dot(&v).sqrt();
        if vn < ZERO_NORM {
            dead.push(j);
            continue;
        }
        scored.push((j, (q.dot(&v) / (qn * vn)).clamp(-1.0, 1.0)));
    }
    if !dead.is_empty() {
        return Err(SaeError::DeadColumns { indices: dead });
    }
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    scored.truncate(m);
    Ok(NeighborResult {
        query: i,
        neighbors: scored,
        source: label.to_owned(),
        jl_epsilon: jl_epsilon(b.n_features() as f64, b.d_model() as f64),
    })
}

/// For every row of `a`, the largest dot product with a row of `b`.
///
/// With `skip_diagonal`, `a` and `b` must be the same matrix and each row
/// ignores itself.
pub fn max_similarity(a: ArrayView2<f32>, b: ArrayView2<f32>, skip_diagonal: bool, block: usize) -> Vec<f32> {
    let block = block.max(1);
    let starts: Vec<usize> = (0..a.nrows()).step_by(block).collect();
    let parts: Vec<Vec<f32>> = starts
        .par_iter()
        .map(|&r0| {
            let r1 = (r0 + block).min(a.nrows());
            let qa = a.slice(s![r0..r1, ..]);
            let mut best = vec![f32::NEG_INFINITY; r1 - r0];
            for c0 in (0..b.nrows()).step_by(block) {
                let c1 = (c0 + block).min(b.nrows());
                let tile = qa.dot(&b.slice(s![c0..c1, ..]).t());
                for (r, row) in tile.axis_iter(Axis(0)).enumerate() {
                    for (c, &v) in row.iter().enumerate() {
                        if skip_diagonal && r0 + r == c0 + c {
                            continue;
                        }
                        if v > best[r] {
                            best[r] = v;
                        }
                    }
                }
            }
            best
        })
        .collect();
    parts.concat()
}

/// Largest pairwise cosine among `F` iid uniform random unit vectors in `D`
/// dimensions (normalized Gaussians). Only the upper triangle is computed.
pub fn random_max_cosine(n_features: usize, d_model: usize, seed: u64) -> f64 {
    random_max_cosine_blocked(n_features, d_model, seed, DEFAULT_BLOCK)
}

pub fn random_max_cosine_blocked(n_features: usize, d_model: usize, seed: u64, block: usize) -> f64 {
    if n_features < 2 {
        return f64::NAN;
    }
    let v = random_unit_rows(n_features, d_model, seed);
    let block = block.max(1);
    let starts: Vec<usize> = (0..n_features).step_by(block).collect();
    let pairs: Vec<(usize, usize)> = starts
        .iter()
        .flat_map(|&r| starts.iter().filter(move |&&c| c >= r).map(move |&c| (r, c)))
        .collect();
    pairs
        .par_iter()
        .map(|&(r0, c0)| {
            let r1 = (r0 + block).min(n_features);
            let c1 = (c0 + block).min(n_features);
            let tile = v.slice(s![r0..r1, ..]).dot(&v.slice(s![c0..c1, ..]).t());
            let mut best = f32::NEG_INFINITY;
            for (r, row) in tile.axis_iter(Axis(0)).enumerate() {
                // strict upper triangle on diagonal tiles
                let from = if r0 == c0 { r + 1 } else { 0 };
                for &x in row.iter().skip(from) {
                    best = best.max(x);
                }
            }
            best
        })
        .reduce(|| f32::NEG_INFINITY, f32::max) as f64
}

/// `F x D` matrix of iid uniform unit vectors.
pub fn random_unit_rows(n: usize, d: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array2::<f32>::zeros((n, d));
    for mut row in v.axis_iter_mut(Axis(0)) {
        let mut ss = 0.0f64;
        for x in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            ss += z * z;
            *x = z as f32;
        }
        let inv = 1.0 / ss.sqrt();
        row.mapv_inplace(|x| (f64::from(x) * inv) as f32);
    }
    v
}

/// Sorted per-feature best-match cosines of one SAE against another, with
/// the same statistic for two fresh random dictionaries of the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingCdf {
    /// Ascending; entry `k` sits at cumulative probability `(k + 1) / n`.
    pub matched: Vec<f64>,
    pub baseline: Vec<f64>,
}

impl MatchingCdf {
    /// Two-sample Kolmogorov-Smirnov distance between matched and baseline.
    pub fn ks_statistic(&self) -> f64 {
        ks_statistic(&self.matched, &self.baseline)
    }

    /// Empirical CDF of the matched cosines at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        ecdf(&self.matched, x)
    }

    /// `cdf_matched` / `cdf_baseline` records; value is the cosine and the
    /// token field carries the 1-based rank.
    pub fn records(&self, source: &str) -> Vec<MetricRecord> {
        let series = [("cdf_matched", &self.matched), ("cdf_baseline", &self.baseline)];
        series
            .iter()
            .flat_map(|(name, v)| {
                v.iter()
                    .enumerate()
                    .map(move |(k, &c)| MetricRecord::new(*name, c, (k + 1) as u64, source))
            })
            .collect()
    }
}

fn ecdf(sorted: &[f64], x: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// `sup_x |F_a(x) - F_b(x)|` over the pooled sample points.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter()
        .chain(&b)
        .map(|&x| (ecdf(&a, x) - ecdf(&b, x)).abs())
        .fold(0.0, f64::max)
}

/// For each feature of `a`, the max cosine against all features of `b`
/// (self included when `a` and `b` coincide), plus a random baseline.
pub fn cross_sae_matching_cdf<T: Real>(a: &SaeParams<T>, b: &SaeParams<T>, seed: u64) -> Result<MatchingCdf> {
    cross_sae_matching_cdf_blocked(a, b, seed, DEFAULT_BLOCK)
}

pub fn cross_sae_matching_cdf_blocked<T: Real>(
    a: &SaeParams<T>,
    b: &SaeParams<T>,
    seed: u64,
    block: usize,
) -> Result<MatchingCdf> {
    check_dim("decoder D", a.d_model(), b.d_model())?;
    let (ua, ub) = (unit_rows(a)?, unit_rows(b)?);
    let d = a.d_model();
    let ra = random_unit_rows(a.n_features(), d, seed);
    let rb = random_unit_rows(b.n_features(), d, seed.wrapping_add(1));
    let sorted = |v: Vec<f32>| {
        let mut v: Vec<f64> = v.into_iter().map(|x| f64::from(x).clamp(-1.0, 1.0)).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    Ok(MatchingCdf {
        matched: sorted(max_similarity(ua.view(), ub.view(), false, block)),
        baseline: sorted(max_similarity(ra.view(), rb.view(), false, block)),
    })
}

/// Project decoder columns onto their top two principal components
/// (presentation only). Returns `F x 2`.
pub fn pca_2d<T: Real>(p: &SaeParams<T>, seed: u64) -> Array2<f64> {
    let x = p.w_dec.t().mapv(|v| v.as_f64());
    let mean = x.mean_axis(Axis(0)).expect("at least one feature");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / x.nrows().max(1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comps: Vec<Array1<f64>> = Vec::new();
    for _ in 0..2 {
        let mut v = Array1::from_shape_simple_fn(cov.nrows(), || StandardNormal.sample(&mut rng));
        for _ in 0..200 {
            let mut w = cov.dot(&v);
            for c in &comps {
                let proj = w.dot(c);
                w.scaled_add(-proj, c);
            }
            let n = w.dot(&w).sqrt();
            if n == 0.0 {
                break;
            }
            v = w / n;
        }
        comps.push(v);
    }
    let mut out = Array2::zeros((x.nrows(), 2));
    for (k, c) in comps.iter().enumerate() {
        out.column_mut(k).assign(&centered.dot(c));
    }
    out
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_params(d: usize, f: usize, seed: u64) -> SaeParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = SaeParams::<f64>::zeros(d, f);
        p.w_dec = Array2::from_shape_simple_fn((d, f), || rng.random_range(-1.0..1.0));
        p
    }

    #[test]
    fn jl_values() {
        assert!((jl_epsilon(32768.0, 4096.0) - 0.174).abs() < 1e-3);
        assert!((jl_epsilon(131072.0, 4096.0) - 0.186).abs() < 1e-3);
        assert!((jl_epsilon(std::f64::consts::E, 12.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_basics_and_loop_oracle() {
        let p = random_params(7, 10, 1);
        assert!((decoder_cosine(&p, 3, &p, 3).unwrap() - 1.0).abs() < 1e-12);
        let mut q = SaeParams::<f64>::zeros(3, 2);
        q.w_dec[[0, 0]] = 2.0;
        q.w_dec[[1, 1]] = -5.0;
        assert_eq!(decoder_cosine(&q, 0, &q, 1).unwrap(), 0.0);
        let r = random_params(7, 6, 2);
        for (i, j) in [(0, 0), (4, 5), (9, 2)] {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for k in 0..7 {
                let (x, y) = (p.w_dec[[k, i]], r.w_dec[[k, j]]);
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            let oracle = dot / (na.sqrt() * nb.sqrt());
            let got = decoder_cosine(&p, i, &r, j).unwrap();
            assert!((got - oracle).abs() < 1e-6);
            assert!((decoder_cosine(&r, j, &p, i).unwrap() - got).abs() < 1e-15);
        }
        // positive rescaling of a column leaves the cosine alone
        let mut s = p.clone();
        s.w_dec.column_mut(4).mapv_inplace(|v| v * 7.5);
        assert!((decoder_cosine(&s, 4, &r, 5).unwrap() - decoder_cosine(&p, 4, &r, 5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_column_is_an_error() {
        let mut p = random_params(4, 5, 3);
        p.w_dec.column_mut(2).fill(0.0);
        assert!(decoder_cosine(&p, 2, &p, 0).is_err());
        assert!(unit_rows(&p).is_err());
    }

    #[test]
    fn neighbors_match_full_sort() {
        let a = random_params(6, 30, 4);
        let b = random_params(6, 40, 5);
        let r = nearest_features(&a, 7, &b, 6, "B").unwrap();
        let mut all: Vec<(usize, f64)> = (0..40).map(|j| (j, decoder_cosine(&a, 7, &b, j).unwrap())).collect();
        all.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
        assert_eq!(r.neighbors.len(), 6);
        for (got, want) in r.neighbors.iter().zip(&all) {
            assert_eq!(got.0, want.0);
            assert!((got.1 - want.1).abs() < 1e-12);
        }
        let full = nearest_features(&a, 7, &b, 40, "B").unwrap();
        assert_eq!(full.neighbors.len(), 40);
        assert!(full.neighbors.windows(2).all(|w| w[0].1 >= w[1].1));
        assert_eq!(r.jl_epsilon, jl_epsilon(40.0, 6.0));
    }

    #[test]
    fn planted_duplicate_tops_the_list_and_self_is_skipped() {
        let a = random_params(5, 12, 6);
        let mut b = random_params(5, 12, 7);
        b.w_dec.column_mut(9).assign(&(&a.w_dec.column(3) * 2.0));
        let r = nearest_features(&a, 3, &b, 1, "B").unwrap();
        assert_eq!(r.neighbors[0].0, 9);
        assert!((r.neighbors[0].1 - 1.0).abs() < 1e-12);
        for i in 0..12 {
            assert_ne!(nearest_features(&a, i, &a, 1, "A").unwrap().neighbors[0].0, i);
        }
        assert!(nearest_features(&a, 0, &a, 12, "A").is_err());
    }

    #[test]
    fn blocked_scan_matches_brute_force() {
        let n = 150;
        let v = random_unit_rows(n, 9, 8);
        let mut best = f32::NEG_INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(v.row(i).dot(&v.row(j)));
            }
        }
        for block in [1, 7, 64, 150, 4096] {
            assert!((random_max_cosine_blocked(n, 9, 8, block) - f64::from(best)).abs() < 1e-6);
        }
        let per_row = max_similarity(v.view(), v.view(), true, 32);
        for i in 0..n {
            let oracle = (0..n).filter(|&j| j != i).map(|j| v.row(i).dot(&v.row(j))).fold(f32::NEG_INFINITY, f32::max);
            assert!((per_row[i] - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn two_vectors_in_the_plane_average_near_zero() {
        let seeds = 2000;
        let mean: f64 = (0..seeds).map(|s| random_max_cosine(2, 2, s)).sum::<f64>() / seeds as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn random_baseline_stays_under_jl_bound() {
        let (f, d) = (2048, 256);
        for seed in 0..3 {
            assert!(random_max_cosine(f, d, seed) < jl_epsilon(f as f64, d as f64));
        }
    }

    #[test]
    fn identical_and_permuted_dictionaries_match_perfectly() {
        let a = random_params(8, 40, 9);
        let cdf = cross_sae_matching_cdf(&a, &a, 0).unwrap();
        assert!(cdf.matched.iter().all(|&c| (c - 1.0).abs() < 1e-6));
        let mut perm: Vec<usize> = (0..40).collect();
        perm.rotate_left(13);
        let mut b = a.clone();
        b.w_dec = a.w_dec.select(Axis(1), &perm);
        let cdf_b = cross_sae_matching_cdf(&a, &b, 0).unwrap();
        assert!(cdf_b.matched.iter().all(|&c| (c - 1.0).abs() < 1e-6));
        assert!(cdf_b.ks_statistic() > 0.5);
        assert_eq!(cdf_b.baseline, cdf.baseline);
    }

    #[test]
    fn ks_statistic_cases() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_statistic(&[0.0, 0.1], &[0.9, 1.0]), 1.0);
        assert!((ks_statistic(&[0.0, 1.0], &[0.5, 1.5]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pca_separates_the_dominant_axis() {
        let mut p = SaeParams::<f64>::zeros(3, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for j in 0..50 {
            p.w_dec[[0, j]] = rng.random_range(-10.0..10.0);
            p.w_dec[[1, j]] = rng.random_range(-1.0..1.0);
            p.w_dec[[2, j]] = rng.random_range(-0.01..0.01);
        }
        let y = pca_2d(&p, 0);
        let xs = p.w_dec.row(0).to_owned();
        let mean = xs.mean().unwrap();
        for j in 0..50 {
            assert!(((y[[j, 0]].abs()) - (xs[j] - mean).abs()).abs() < 0.2);
        }
    }
}
