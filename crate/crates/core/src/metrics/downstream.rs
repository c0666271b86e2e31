// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::activations::ActivationBatch;

/// A scalar loss over activation vectors standing in for the rest of a model.
///
/// `tokens` is the original batch (labels and context may be derived from
/// it); `acts` is what gets patched in, either the original activations or an
/// SAE reconstruction. Implementations must be deterministic.
pub trait DownstreamEvaluator {
    fn d_model(&self) -> usize;

    /// Mean loss per row of `acts`.
    fn loss(&self, tokens: &ActivationBatch, acts: ArrayView2<f32>) -> f64;
}

/// Fixed random linear readout into `C` classes with softmax cross-entropy.
///
/// Each token's label is the argmax class of the readout on its original
/// activations, so the unpatched loss is low and anything that destroys the
/// signal raises it.
#[derive(Debug, Clone)]
pub struct LinearSoftmaxReadout {
    weights: Array2<f64>,
}

impl LinearSoftmaxReadout {
    /// `weights` is `C x D`.
    pub fn new(weights: Array2<f64>) -> Self {
        Self { weights }
    }

    /// Gaussian readout scaled by `scale / sqrt(D)`.
    pub fn random(d_model: usize, n_classes: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = scale / (d_model as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((n_classes, d_model), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            s * z
        });
        Self { weights }
    }

    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    fn logits(&self, acts: ArrayView2<f32>) -> Array2<f64> {
        acts.mapv(f64::from).dot(&self.weights.t())
    }

    pub fn labels(&self, acts: ArrayView2<f32>) -> Vec<usize> {
        self.logits(acts)
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}

impl DownstreamEvaluator for LinearSoftmaxReadout {
    fn d_model(&self) -> usize {
        self.weights.ncols()
    }

    fn loss(&self, tokens: &ActivationBatch, acts: ArrayView2<f32>) -> f64 {
        let labels = self.labels(tokens.target().view());
        let logits = self.logits(acts);
        let mut total = 0.0;
        for (row, &y) in logits.axis_iter(Axis(0)).zip(&labels) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        total / logits.nrows().max(1) as f64
    }
}
