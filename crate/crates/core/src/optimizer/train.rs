// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt::Write as _;

use ndarray::Axis;

use super::{
    adam_step, forward_backward, init_params, k_at, lr_at, project_decoder_grads,
    renormalize_decoder, AdamState, TrainSchedule,
};
use crate::activations::{collect_valid, ActivationSource};
use crate::error::{check_dim, Result, SaeError};
use crate::normalize::{
    apply_norm, check_factors, estimate_norm_factors, NormFactors, DEFAULT_NORM_SAMPLES,
};
use crate::sae::{PositionKind, SaeConfig, SaeParams, Variant};

/// Tokens over which a feature must fire to count as alive.
pub const DEFAULT_DEAD_WINDOW_TOKENS: u64 = 1_000_000;

/// Knobs of the training loop that are not part of the schedule.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Use these factors instead of estimating them from the head of the stream.
    pub norm_factors: Option<NormFactors>,
    /// Rows consumed for norm estimation when `norm_factors` is `None`.
    pub norm_samples: usize,
    /// Record a history entry every this many steps (and at the last step).
    pub log_every: usize,
    pub dead_window_tokens: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            norm_factors: None,
            norm_samples: DEFAULT_NORM_SAMPLES,
            log_every: 10,
            dead_window_tokens: DEFAULT_DEAD_WINDOW_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub tokens_seen: u64,
    pub lr: f64,
    pub effective_k: usize,
    /// Normalized-space MSE of the batch, before the update.
    pub mse: f64,
    pub l0_mean: f64,
    /// Features that have not fired within the dead-feature window.
    pub fraction_never_fired: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
}

impl TrainHistory {
    /// Tab-separated table with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "step\ttokens_seen\tlr\teffective_k\tmse\tl0_mean\tfraction_never_fired\n",
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.step,
                r.tokens_seen,
                r.lr,
                r.effective_k,
                r.mse,
                r.l0_mean,
                r.fraction_never_fired
            );
        }
        out
    }

    /// Last record at or before `step`.
    pub fn at_or_before(&self, step: usize) -> Option<&TrainRecord> {
        self.records.iter().take_while(|r| r.step <= step).last()
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final weights, still in normalized space (see [`crate::normalize`]).
    pub params: SaeParams<f32>,
    pub history: TrainHistory,
    pub adam: AdamState<f32>,
    pub norm_factors: NormFactors,
    pub steps_completed: usize,
}

/// Train an SAE from scratch.
///
/// Per step: draw `batch_size` valid rows, normalize them, compute loss and
/// gradients at `k_at(step)`, apply the vanilla decoder constraint when
/// relevant, and take an Adam step at `lr_at(step)`.
pub fn train(
    config: &SaeConfig,
    schedule: &TrainSchedule,
    source: &mut dyn ActivationSource,
    seed: u64,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    schedule.validate()?;
    if config.variant == Variant::JumpRelu {
        return Err(SaeError::Config(
            "JumpReLU is inference-only and cannot be trained".into(),
        ));
    }
    check_dim("source width", config.d_model, source.d_model())?;
    let transcoder = config.position_kind == PositionKind::Transcoder;
    if transcoder != source.has_targets() {
        return Err(SaeError::Config(format!(
            "{:?} SAE needs a source {} targets",
            config.position_kind,
            if transcoder { "with" } else { "without" }
        )));
    }

    let mut params = init_params::<f32>(config, seed);
    let mut adam = AdamState::new(&params);
    if schedule.total_steps == 0 {
        return Ok(TrainOutcome {
            params,
            history: TrainHistory::default(),
            adam,
            norm_factors: options.norm_factors.unwrap_or(NormFactors::IDENTITY),
            steps_completed: 0,
        });
    }

    let factors = match options.norm_factors {
        Some(f) => f,
        None => estimate_norm_factors(source, options.norm_samples)?,
    };
    check_factors(config, &factors)?;

    let n_features = config.n_features;
    let mut last_fired: Vec<Option<u64>> = vec![None; n_features];
    let mut tokens_seen = 0u64;
    let mut history = TrainHistory::default();
    let log_every = options.log_every.max(1);

    for step in 0..schedule.total_steps {
        let Some(raw) = collect_valid(source, schedule.batch_size)? else {
            return Err(SaeError::DataExhausted {
                steps_completed: step,
                total_steps: schedule.total_steps,
            });
        };
        let batch = apply_norm(&raw, &factors);
        let k = match config.variant {
            Variant::TopK => k_at(step, schedule, config),
            _ => config.k,
        };
        let out = forward_backward(config, &params, &batch, k).map_err(|e| e.at_step(step))?;
        let mut grads = out.result.grads;
        if config.variant == Variant::Vanilla {
            project_decoder_grads(&params, &mut grads);
        }
        let lr = lr_at(step, schedule);
        adam_step(&mut adam, &mut params, &grads, lr)?;
        if config.variant == Variant::Vanilla {
            renormalize_decoder(&mut params);
        }

        let mut active = 0usize;
        for (r, row) in out.codes.axis_iter(Axis(0)).enumerate() {
            let token = tokens_seen + r as u64;
            for (i, &v) in row.iter().enumerate() {
                if v > 0.0 {
                    last_fired[i] = Some(token);
                    active += 1;
                }
            }
        }
        let n = out.codes.nrows();
        tokens_seen += n as u64;

        if step % log_every == 0 || step + 1 == schedule.total_steps {
            let dead = last_fired
                .iter()
                .filter(|t| t.is_none_or(|t| tokens_seen - t > options.dead_window_tokens))
                .count();
            history.records.push(TrainRecord {
                step,
                tokens_seen,
                lr,
                effective_k: k,
                mse: out.result.mse,
                l0_mean: active as f64 / n as f64,
                fraction_never_fired: dead as f64 / n_features as f64,
            });
        }
    }

    Ok(TrainOutcome {
        params,
        history,
        adam,
        norm_factors: factors,
        steps_completed: schedule.total_steps,
    })
}
