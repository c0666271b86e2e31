// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic superposition data with a known ground-truth dictionary.
//!
//! `G > D` unit-norm directions; each row activates every direction
//! independently with probability `fire_prob`, draws a magnitude, sums the
//! scaled directions and adds isotropic Gaussian noise.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Normal, StandardNormal, Uniform};

use std::path::Path;

use super::{write_activation_file, ActivationBatch, ActivationFileReader, ActivationMeta, ActivationSource, DType};
use crate::error::{Result, SaeError};
use crate::sae::FeatureVector;

pub const DEFAULT_SYNTH_D: usize = 64;
pub const DEFAULT_SYNTH_G: usize = 256;
pub const DEFAULT_EXPECTED_ACTIVE: f64 = 5.0;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MagnitudeDist {
    UniformOnInterval { lo: f64, hi: f64 },
    Exponential { rate: f64 },
}

/// Ground-truth feature directions plus the sampling law.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDictionary {
    /// `G x D`, unit-norm rows.
    pub ground_truth: Array2<f32>,
    /// Separate `G x D` output directions for transcoder data.
    pub output_directions: Option<Array2<f32>>,
    pub fire_prob: f64,
    pub magnitude_dist: MagnitudeDist,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn random_unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let mut m = Array2::from_shape_simple_fn((rows, cols), || {
        let v: f64 = StandardNormal.sample(rng);
        v
    });
    for mut row in m.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    m.mapv(|v| v as f32)
}

impl SyntheticDictionary {
    pub fn new(
        d_model: usize,
        n_ground_truth: usize,
        fire_prob: f64,
        magnitude_dist: MagnitudeDist,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if d_model == 0 || n_ground_truth <= d_model {
            return Err(SaeError::Config(format!(
                "need G > D >= 1 for superposition (got G = {n_ground_truth}, D = {d_model})"
            )));
        }
        if !(fire_prob > 0.0 && fire_prob < 1.0) {
            return Err(SaeError::Config(format!(
                "fire_prob must lie in (0, 1) (got {fire_prob})"
            )));
        }
        match magnitude_dist {
            MagnitudeDist::UniformOnInterval { lo, hi }
                if !(lo.is_finite() && hi.is_finite() && lo < hi) =>
            {
                return Err(SaeError::Config(format!(
                    "bad magnitude interval [{lo}, {hi})"
                )));
            }
            MagnitudeDist::Exponential { rate } if !(rate.is_finite() && rate > 0.0) => {
                return Err(SaeError::Config(format!(
                    "exponential rate must be positive (got {rate})"
                )));
            }
            _ => {}
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(SaeError::Config(format!(
                "noise_sigma must be nonnegative (got {noise_sigma})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            ground_truth: random_unit_rows(n_ground_truth, d_model, &mut rng),
            output_directions: None,
            fire_prob,
            magnitude_dist,
            noise_sigma,
            seed,
        })
    }

    /// D = 64, G = 256, about 5 active features per row, magnitudes
    /// Uniform(0.5, 2), noise sigma 0.01.
    pub fn default_with_seed(seed: u64) -> Self {
        Self::new(
            DEFAULT_SYNTH_D,
            DEFAULT_SYNTH_G,
            DEFAULT_EXPECTED_ACTIVE / DEFAULT_SYNTH_G as f64,
            MagnitudeDist::UniformOnInterval { lo: 0.5, hi: 2.0 },
            DEFAULT_NOISE_SIGMA,
            seed,
        )
        .expect("defaults are valid")
    }

    /// Add an independent set of output directions so rows come with
    /// transcoder targets `x_out = code^T * output_directions`.
    pub fn with_transcoder_targets(mut self) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x7c0d_e7a5);
        self.output_directions = Some(random_unit_rows(
            self.n_ground_truth(),
            self.d_model(),
            &mut rng,
        ));
        self
    }

    pub fn d_model(&self) -> usize {
        self.ground_truth.ncols()
    }

    pub fn n_ground_truth(&self) -> usize {
        self.ground_truth.nrows()
    }

    /// Store as an activation file: one row per ground-truth direction (plus
    /// output directions as targets) and the sampling law in the metadata.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut meta = ActivationMeta::new("dictionary", "synthetic");
        let dist = match self.magnitude_dist {
            MagnitudeDist::UniformOnInterval { lo, hi } => format!("uniform:{lo}:{hi}"),
            MagnitudeDist::Exponential { rate } => format!("exponential:{rate}"),
        };
        for (k, v) in [
            ("fire_prob", self.fire_prob.to_string()),
            ("magnitude", dist),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("seed", self.seed.to_string()),
        ] {
            meta.extra.insert(k.into(), v);
        }
        let batch = match &self.output_directions {
            Some(out) => ActivationBatch::with_targets(self.ground_truth.clone(), out.clone())?,
            None => ActivationBatch::new(self.ground_truth.clone()),
        };
        write_activation_file(path, &[batch], &meta, DType::F32).map(|_| ())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = ActivationFileReader::open(path)?;
        let meta = r.meta().clone();
        let bad = |k: &str| SaeError::Parse {
            offset: 21,
            msg: format!("dictionary metadata key {k:?} missing or malformed"),
        };
        let get = |k: &str| meta.extra.get(k).ok_or_else(|| bad(k));
        let num = |k: &str| get(k)?.parse::<f64>().map_err(|_| bad(k));
        let parts: Vec<&str> = get("magnitude")?.split(':').collect();
        let magnitude_dist = match parts.as_slice() {
            ["uniform", lo, hi] => MagnitudeDist::UniformOnInterval {
                lo: lo.parse().map_err(|_| bad("magnitude"))?,
                hi: hi.parse().map_err(|_| bad("magnitude"))?,
            },
            ["exponential", rate] => MagnitudeDist::Exponential {
                rate: rate.parse().map_err(|_| bad("magnitude"))?,
            },
            _ => return Err(bad("magnitude")),
        };
        let batch = r.read_all()?;
        Ok(Self {
            ground_truth: batch.x_in,
            output_directions: batch.x_out,
            fire_prob: num("fire_prob")?,
            magnitude_dist,
            noise_sigma: num("noise_sigma")?,
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
        })
    }
}

/// Endless (or length-limited) stream of synthetic rows.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    dict: SyntheticDictionary,
    rng: ChaCha8Rng,
    gaps: Geometric,
    noise: Option<Normal<f64>>,
    limit: Option<u64>,
    emitted: u64,
}

impl SyntheticSource {
    pub fn new(dict: SyntheticDictionary, stream_seed: u64) -> Self {
        let gaps = Geometric::new(dict.fire_prob).expect("validated probability");
        let noise = (dict.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, dict.noise_sigma).expect("validated sigma"));
        Self {
            rng: ChaCha8Rng::seed_from_u64(stream_seed),
            gaps,
            noise,
            dict,
            limit: None,
            emitted: 0,
        }
    }

    /// Stop after `tokens` rows.
    pub fn with_limit(mut self, tokens: u64) -> Self {
        self.limit = Some(tokens);
        self
    }

    pub fn dictionary(&self) -> &SyntheticDictionary {
        &self.dict
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    fn magnitude(&mut self) -> f32 {
        let m = match self.dict.magnitude_dist {
            MagnitudeDist::UniformOnInterval { lo, hi } => Uniform::new(lo, hi)
                .expect("validated")
                .sample(&mut self.rng),
            MagnitudeDist::Exponential { rate } => {
                Exp::new(rate).expect("validated").sample(&mut self.rng)
            }
        };
        m as f32
    }

    /// `n` rows plus their ground-truth sparse codes (indices into the dictionary).
    pub fn synth_sample(&mut self, n: usize) -> (ActivationBatch, Vec<FeatureVector<f32>>) {
        let g = self.dict.n_ground_truth();
        let d = self.dict.d_model();
        let mut x_in = Array2::<f32>::zeros((n, d));
        let mut x_out = self
            .dict
            .output_directions
            .as_ref()
            .map(|_| Array2::<f32>::zeros((n, d)));
        let mut codes = Vec::with_capacity(n);
        for r in 0..n {
            let mut pairs = Vec::new();
            let mut idx = self.gaps.sample(&mut self.rng);
            while idx < g as u64 {
                let m = self.magnitude();
                pairs.push((idx as usize, m));
                idx += 1 + self.gaps.sample(&mut self.rng);
            }
            let mut row = x_in.row_mut(r);
            for &(i, m) in &pairs {
                row.scaled_add(m, &self.dict.ground_truth.row(i));
            }
            if let Some(noise) = &self.noise {
                for v in row.iter_mut() {
                    *v += noise.sample(&mut self.rng) as f32;
                }
            }
            if let (Some(out), Some(dirs)) = (x_out.as_mut(), self.dict.output_directions.as_ref())
            {
                let mut orow = out.row_mut(r);
                for &(i, m) in &pairs {
                    orow.scaled_add(m, &dirs.row(i));
                }
            }
            codes.push(FeatureVector::from_pairs(pairs));
        }
        self.emitted += n as u64;
        let batch = match x_out {
            Some(out) => ActivationBatch::with_targets(x_in, out).expect("same shape"),
            None => ActivationBatch::new(x_in),
        };
        (batch, codes)
    }
}

impl ActivationSource for SyntheticSource {
    fn d_model(&self) -> usize {
        self.dict.d_model()
    }

    fn has_targets(&self) -> bool {
        self.dict.output_directions.is_some()
    }

    fn next_batch(&mut self, n: usize) -> Result<Option<ActivationBatch>> {
        let n = match self.limit {
            Some(limit) => n.min((limit - self.emitted) as usize),
            None => n,
        };
        if n == 0 {
            return Ok(None);
        }
        Ok(Some(self.synth_sample(n).0))
    }
}
