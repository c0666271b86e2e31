// SPDX-License-Identifier: MIT OR Apache-2.0

//! Self-describing checkpoint container.
//!
//! Little-endian throughout. Version 1 layout:
//!
//! ```text
//! magic        4 bytes  "SAEF"
//! version      u32      1
//! label        u32 length + UTF-8 bytes, e.g. "L15R-8x-TopK"
//! config       u64 d_model, u64 n_features, u64 k,
//!              u8 variant {0 Vanilla, 1 TopK, 2 JumpReLU},
//!              u8 position_kind {0 Autoencoder, 1 Transcoder}, f64 l1_coeff
//! schedule     u64 total_steps, f64 base_lr, u64 warmup_steps,
//!              f64 decay_fraction, f64 k_anneal_fraction, u64 batch_size
//! step_count   u64
//! norm_state   u8 {0 none, 1 pending (weights in normalized space), 2 folded}
//! norm         f64 s_in, f64 s_out
//! theta        u8 present flag, f32 value
//! params       f32 row-major: w_enc[F*D], b_enc[F], w_dec[D*F], b_dec[D]
//! adam         u8 present flag; when 1: u64 step, f64 beta1, f64 beta2, f64 eps,
//!              m then v, each as four f32 tensors in the params order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{AdamState, Gradients, TrainSchedule};
use crate::bytes::{put_f32, put_f32s, put_f64, put_string, put_u32, put_u64, put_u8, LeReader};
use crate::error::Result;
use crate::normalize::NormFactors;
use crate::sae::{PositionKind, Sae, SaeConfig, SaeParams, Variant};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SAEF";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where the normalization factors stand relative to the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormState {
    None,
    /// Weights expect inputs scaled by these factors.
    Pending(NormFactors),
    /// Factors were folded into the weights; kept for reference.
    Folded(NormFactors),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub label: String,
    pub config: SaeConfig,
    pub schedule: TrainSchedule,
    pub step_count: u64,
    pub norm: NormState,
    pub params: SaeParams<f32>,
    pub adam: Option<AdamState<f32>>,
}

impl Checkpoint {
    /// The SAE as it should run on raw activations.
    pub fn sae(&self) -> Result<Sae> {
        let sae = Sae::new(self.config, self.params.clone())?;
        Ok(match self.norm {
            NormState::Pending(f) => sae.with_pending_norm(f),
            _ => sae,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        self.params.check_shape(&self.config)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        put_string(w, &self.label)?;

        let c = &self.config;
        put_u64(w, c.d_model as u64)?;
        put_u64(w, c.n_features as u64)?;
        put_u64(w, c.k as u64)?;
        put_u8(w, c.variant.code())?;
        put_u8(w, c.position_kind.code())?;
        put_f64(w, c.l1_coeff)?;

        let s = &self.schedule;
        put_u64(w, s.total_steps as u64)?;
        put_f64(w, s.base_lr)?;
        put_u64(w, s.warmup_steps as u64)?;
        put_f64(w, s.decay_fraction)?;
        put_f64(w, s.k_anneal_fraction)?;
        put_u64(w, s.batch_size as u64)?;

        put_u64(w, self.step_count)?;
        let (code, f) = match self.norm {
            NormState::None => (0, NormFactors::IDENTITY),
            NormState::Pending(f) => (1, f),
            NormState::Folded(f) => (2, f),
        };
        put_u8(w, code)?;
        put_f64(w, f.s_in)?;
        put_f64(w, f.s_out)?;

        put_u8(w, u8::from(self.params.theta.is_some()))?;
        put_f32(w, self.params.theta.unwrap_or(0.0))?;
        write_tensors(
            w,
            &self.params.w_enc,
            &self.params.b_enc,
            &self.params.w_dec,
            &self.params.b_dec,
        )?;

        match &self.adam {
            None => put_u8(w, 0)?,
            Some(a) => {
                put_u8(w, 1)?;
                put_u64(w, a.step_count)?;
                put_f64(w, a.beta1)?;
                put_f64(w, a.beta2)?;
                put_f64(w, a.eps)?;
                for g in [&a.m, &a.v] {
                    write_tensors(w, &g.w_enc, &g.b_enc, &g.w_dec, &g.b_dec)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = LeReader::new(r);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return r.fail(format!("unsupported checkpoint version {version}"));
        }
        let label = r.string("label")?;

        let d_model = r.usize("d_model")?;
        let n_features = r.usize("n_features")?;
        let k = r.usize("k")?;
        let v = r.u8("variant")?;
        let variant = match Variant::from_code(v) {
            Some(v) => v,
            None => return r.fail(format!("unknown variant code {v}")),
        };
        let p = r.u8("position_kind")?;
        let position_kind = match PositionKind::from_code(p) {
            Some(p) => p,
            None => return r.fail(format!("unknown position kind code {p}")),
        };
        let l1_coeff = r.f64("l1_coeff")?;
        let config = match SaeConfig::new(d_model, n_features, k, variant, position_kind, l1_coeff)
        {
            Ok(c) => c,
            Err(e) => return r.fail(e.to_string()),
        };

        let schedule = TrainSchedule {
            total_steps: r.usize("total_steps")?,
            base_lr: r.f64("base_lr")?,
            warmup_steps: r.usize("warmup_steps")?,
            decay_fraction: r.f64("decay_fraction")?,
            k_anneal_fraction: r.f64("k_anneal_fraction")?,
            batch_size: r.usize("batch_size")?,
        };
        let step_count = r.u64("step_count")?;

        let norm_code = r.u8("norm_state")?;
        let s_in = r.f64("s_in")?;
        let s_out = r.f64("s_out")?;
        let norm = match norm_code {
            0 => NormState::None,
            1 | 2 => {
                let f = match NormFactors::new(s_in, s_out) {
                    Ok(f) => f,
                    Err(e) => return r.fail(e.to_string()),
                };
                if norm_code == 1 {
                    NormState::Pending(f)
                } else {
                    NormState::Folded(f)
                }
            }
            other => return r.fail(format!("unknown norm state {other}")),
        };

        let has_theta = r.u8("theta flag")? != 0;
        let theta = r.f32("theta")?;
        let (w_enc, b_enc, w_dec, b_dec) = read_tensors(&mut r, d_model, n_features)?;
        let params = SaeParams {
            w_enc,
            b_enc,
            w_dec,
            b_dec,
            theta: has_theta.then_some(theta),
        };

        let adam = match r.u8("adam flag")? {
            0 => None,
            1 => {
                let step_count = r.u64("adam step")?;
                let beta1 = r.f64("beta1")?;
                let beta2 = r.f64("beta2")?;
                let eps = r.f64("eps")?;
                let (a, b, c, d) = read_tensors(&mut r, d_model, n_features)?;
                let m = Gradients {
                    w_enc: a,
                    b_enc: b,
                    w_dec: c,
                    b_dec: d,
                };
                let (a, b, c, d) = read_tensors(&mut r, d_model, n_features)?;
                let v = Gradients {
                    w_enc: a,
                    b_enc: b,
                    w_dec: c,
                    b_dec: d,
                };
                Some(AdamState {
                    m,
                    v,
                    step_count,
                    beta1,
                    beta2,
                    eps,
                })
            }
            other => return r.fail(format!("bad adam flag {other}")),
        };
        let mut probe = [0u8; 1];
        if r.fill(&mut probe, "end").is_ok() {
            return r.fail("trailing bytes after checkpoint");
        }
        Ok(Self {
            label,
            config,
            schedule,
            step_count,
            norm,
            params,
            adam,
        })
    }
}

fn write_tensors(
    w: &mut impl Write,
    w_enc: &Array2<f32>,
    b_enc: &Array1<f32>,
    w_dec: &Array2<f32>,
    b_dec: &Array1<f32>,
) -> Result<()> {
    put_f32s(w, w_enc.iter())?;
    put_f32s(w, b_enc.iter())?;
    put_f32s(w, w_dec.iter())?;
    put_f32s(w, b_dec.iter())?;
    Ok(())
}

type Tensors = (Array2<f32>, Array1<f32>, Array2<f32>, Array1<f32>);

fn read_tensors<R: Read>(r: &mut LeReader<R>, d: usize, f: usize) -> Result<Tensors> {
    let w_enc = Array2::from_shape_vec((f, d), r.f32s(f * d, "w_enc")?).expect("sized");
    let b_enc = Array1::from(r.f32s(f, "b_enc")?);
    let w_dec = Array2::from_shape_vec((d, f), r.f32s(d * f, "w_dec")?).expect("sized");
    let b_dec = Array1::from(r.f32s(d, "b_dec")?);
    Ok((w_enc, b_enc, w_dec, b_dec))
}
