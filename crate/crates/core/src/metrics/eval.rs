// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{Array2, ArrayView2, Axis};

use super::{DownstreamEvaluator, MetricRecord};
use crate::activations::{collect_valid, ActivationBatch, ActivationSource};
use crate::error::{check_dim, Result, SaeError};
use crate::sae::{FeatureVector, Sae};

const EVAL_CHUNK: usize = 4096;

/// Anything that maps a batch of inputs to `(codes, reconstructions)`.
pub trait Autoencoder {
    fn d_model(&self) -> usize;
    fn n_features(&self) -> usize;
    fn run(&self, x: &Array2<f32>) -> Result<(Array2<f32>, Array2<f32>)>;
}

impl Autoencoder for Sae {
    fn d_model(&self) -> usize {
        self.config.d_model
    }

    fn n_features(&self) -> usize {
        self.config.n_features
    }

    fn run(&self, x: &Array2<f32>) -> Result<(Array2<f32>, Array2<f32>)> {
        self.forward(x)
    }
}

/// Returns its input as both code and reconstruction.
#[derive(Debug, Clone, Copy)]
pub struct PassThrough {
    pub d_model: usize,
}

impl Autoencoder for PassThrough {
    fn d_model(&self) -> usize {
        self.d_model
    }

    fn n_features(&self) -> usize {
        self.d_model
    }

    fn run(&self, x: &Array2<f32>) -> Result<(Array2<f32>, Array2<f32>)> {
        Ok((x.clone(), x.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub l0_mean: f64,
    /// Uncentered: `1 - sum ||x - x_hat||^2 / sum ||x||^2` over nonzero rows.
    pub explained_variance: f64,
    /// Per-element mean squared error.
    pub mse: f64,
    pub delta_downstream_loss: Option<f64>,
    pub n_tokens: u64,
    /// Zero-norm target rows left out of the explained variance.
    pub ev_excluded_rows: u64,
}

impl EvalReport {
    pub fn records(&self, source: &str) -> Vec<MetricRecord> {
        let n = self.n_tokens;
        let mut out = vec![
            MetricRecord::new("l0_mean", self.l0_mean, n, source),
            MetricRecord::new("explained_variance", self.explained_variance, n, source),
            MetricRecord::new("mse", self.mse, n, source),
        ];
        if let Some(d) = self.delta_downstream_loss {
            out.push(MetricRecord::new("delta_downstream_loss", d, n, source));
        }
        out.push(MetricRecord::new(
            "ev_excluded_rows",
            self.ev_excluded_rows as f64,
            n,
            source,
        ));
        out
    }
}

/// Streaming sums behind [`EvalReport`]; shards merge by addition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalAccumulator {
    pub n_tokens: u64,
    pub n_elements: u64,
    pub active: u64,
    pub sq_err: f64,
    /// Squared error over rows with a nonzero target.
    pub sq_err_ev: f64,
    pub sq_target_ev: f64,
    pub excluded_rows: u64,
    pub loss_original: f64,
    pub loss_patched: f64,
    pub downstream: bool,
}

impl EvalAccumulator {
    /// Add one all-valid batch with its codes and reconstructions.
    pub fn add(
        &mut self,
        batch: &ActivationBatch,
        codes: ArrayView2<f32>,
        x_hat: ArrayView2<f32>,
        evaluator: Option<&dyn DownstreamEvaluator>,
    ) -> Result<()> {
        let target = batch.target();
        check_dim("reconstruction rows", target.nrows(), x_hat.nrows())?;
        check_dim("reconstruction width", target.ncols(), x_hat.ncols())?;
        check_dim("code rows", target.nrows(), codes.nrows())?;
        let n = target.nrows();
        self.active += codes.iter().filter(|&&v| v != 0.0).count() as u64;
        for (x, y) in target.axis_iter(Axis(0)).zip(x_hat.axis_iter(Axis(0))) {
            let err: f64 = x
                .iter()
                .zip(y)
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum();
            let norm: f64 = x.iter().map(|&a| f64::from(a).powi(2)).sum();
            self.sq_err += err;
            if norm > 0.0 {
                self.sq_err_ev += err;
                self.sq_target_ev += norm;
            } else {
                self.excluded_rows += 1;
            }
        }
        if let Some(ev) = evaluator {
            check_dim("evaluator D", ev.d_model(), target.ncols())?;
            self.downstream = true;
            self.loss_original += ev.loss(batch, target.view()) * n as f64;
            self.loss_patched += ev.loss(batch, x_hat) * n as f64;
        }
        self.n_tokens += n as u64;
        self.n_elements += (n * target.ncols()) as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        self.n_tokens += other.n_tokens;
        self.n_elements += other.n_elements;
        self.active += other.active;
        self.sq_err += other.sq_err;
        self.sq_err_ev += other.sq_err_ev;
        self.sq_target_ev += other.sq_target_ev;
        self.excluded_rows += other.excluded_rows;
        self.loss_original += other.loss_original;
        self.loss_patched += other.loss_patched;
        self.downstream |= other.downstream;
    }

    pub fn finish(&self) -> Result<EvalReport> {
        if self.n_tokens == 0 {
            return Err(SaeError::Contract("evaluation saw no valid tokens".into()));
        }
        if self.sq_target_ev == 0.0 {
            return Err(SaeError::Contract(
                "every target row is zero; explained variance undefined".into(),
            ));
        }
        let n = self.n_tokens as f64;
        Ok(EvalReport {
            l0_mean: self.active as f64 / n,
            explained_variance: 1.0 - self.sq_err_ev / self.sq_target_ev,
            mse: self.sq_err / self.n_elements as f64,
            delta_downstream_loss: self
                .downstream
                .then(|| (self.loss_patched - self.loss_original) / n),
            n_tokens: self.n_tokens,
            ev_excluded_rows: self.excluded_rows,
        })
    }
}

/// Uncentered explained variance of `x_hat` against `x`, pooled over rows.
///
/// Zero rows of `x` are skipped. Fails when every row is zero.
pub fn explained_variance(x: ArrayView2<f32>, x_hat: ArrayView2<f32>) -> Result<f64> {
    check_dim("reconstruction rows", x.nrows(), x_hat.nrows())?;
    check_dim("reconstruction width", x.ncols(), x_hat.ncols())?;
    let (mut err, mut energy) = (0.0f64, 0.0f64);
    for (a, b) in x.axis_iter(Axis(0)).zip(x_hat.axis_iter(Axis(0))) {
        let norm: f64 = a.iter().map(|&v| f64::from(v).powi(2)).sum();
        if norm > 0.0 {
            energy += norm;
            err += a
                .iter()
                .zip(b)
                .map(|(&p, &q)| (f64::from(p) - f64::from(q)).powi(2))
                .sum::<f64>();
        }
    }
    if energy == 0.0 {
        return Err(SaeError::Contract(
            "every row of x is zero; explained variance undefined".into(),
        ));
    }
    Ok(1.0 - err / energy)
}

/// Mean number of active features per token; zero for no tokens.
pub fn l0_mean(features: &[FeatureVector<f32>]) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    features.iter().map(FeatureVector::nnz).sum::<usize>() as f64 / features.len() as f64
}

/// Evaluate `model` on up to `n_tokens` valid tokens of `source`.
///
/// With an evaluator, `delta_downstream_loss` is the evaluator's mean loss on
/// reconstructions minus its mean loss on the original activations.
pub fn evaluate(
    model: &dyn Autoencoder,
    source: &mut dyn ActivationSource,
    n_tokens: usize,
    evaluator: Option<&dyn DownstreamEvaluator>,
) -> Result<EvalReport> {
    check_dim("source D", model.d_model(), source.d_model())?;
    let mut acc = EvalAccumulator::default();
    while (acc.n_tokens as usize) < n_tokens {
        let want = (n_tokens - acc.n_tokens as usize).min(EVAL_CHUNK);
        let Some(batch) = collect_valid(source, want)? else {
            break;
        };
        let (codes, x_hat) = model.run(&batch.x_in)?;
        acc.add(&batch, codes.view(), x_hat.view(), evaluator)?;
    }
    acc.finish()
}
