// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SaeError};

/// Activation function used by the hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// ReLU with an L1 penalty during training.
    Vanilla,
    /// Decoder-norm-weighted TopK.
    TopK,
    /// Thresholded ReLU; only reachable by calibrating a trained TopK SAE.
    JumpRelu,
}

impl Variant {
    pub(crate) fn code(self) -> u8 {
        match self {
            Self::Vanilla => 0,
            Self::TopK => 1,
            Self::JumpRelu => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Vanilla),
            1 => Some(Self::TopK),
            2 => Some(Self::JumpRelu),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Vanilla => "Vanilla",
            Self::TopK => "TopK",
            Self::JumpRelu => "JumpReLU",
        })
    }
}

impl FromStr for Variant {
    type Err = SaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" => Ok(Self::Vanilla),
            "topk" => Ok(Self::TopK),
            "jumprelu" => Ok(Self::JumpRelu),
            other => Err(SaeError::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Whether the SAE reconstructs its own input or predicts a separate target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PositionKind {
    Autoencoder,
    Transcoder,
}

impl PositionKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            Self::Autoencoder => 0,
            Self::Transcoder => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Autoencoder),
            1 => Some(Self::Transcoder),
            _ => None,
        }
    }
}

impl FromStr for PositionKind {
    type Err = SaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sae" | "autoencoder" => Ok(Self::Autoencoder),
            "transcoder" | "tc" => Ok(Self::Transcoder),
            other => Err(SaeError::Config(format!("unknown position kind {other:?}"))),
        }
    }
}

/// Where in a transformer block the activations were captured.
///
/// `R`, `A` and `M` sites train plain autoencoders; `TC` trains a transcoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Site {
    /// Post-MLP residual stream.
    Residual,
    /// Attention output.
    Attention,
    /// MLP output.
    Mlp,
    /// Layer-normalized residual stream in, MLP output out.
    Transcoder,
}

impl Site {
    pub fn position_kind(self) -> PositionKind {
        match self {
            Self::Transcoder => PositionKind::Transcoder,
            _ => PositionKind::Autoencoder,
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            Self::Residual => "R",
            Self::Attention => "A",
            Self::Mlp => "M",
            Self::Transcoder => "TC",
        }
    }
}

impl FromStr for Site {
    type Err = SaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R" => Ok(Self::Residual),
            "A" => Ok(Self::Attention),
            "M" => Ok(Self::Mlp),
            "TC" => Ok(Self::Transcoder),
            other => Err(SaeError::Config(format!("unknown site {other:?}"))),
        }
    }
}

/// Shape and sparsity settings for one SAE. Immutable for the duration of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaeConfig {
    /// Input (and output) dimension `D`.
    pub d_model: usize,
    /// Number of latent features `F`.
    pub n_features: usize,
    /// Target number of active features `K`.
    pub k: usize,
    pub variant: Variant,
    pub position_kind: PositionKind,
    /// L1 coefficient; only read by [`Variant::Vanilla`].
    pub l1_coeff: f64,
}

impl SaeConfig {
    pub fn new(
        d_model: usize,
        n_features: usize,
        k: usize,
        variant: Variant,
        position_kind: PositionKind,
        l1_coeff: f64,
    ) -> Result<Self> {
        let cfg = Self {
            d_model,
            n_features,
            k,
            variant,
            position_kind,
            l1_coeff,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// TopK autoencoder with `F = expansion * D`.
    pub fn topk(d_model: usize, expansion: usize, k: usize) -> Result<Self> {
        Self::new(
            d_model,
            d_model * expansion,
            k,
            Variant::TopK,
            PositionKind::Autoencoder,
            0.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 {
            return Err(SaeError::Config("d_model must be at least 1".into()));
        }
        if self.n_features == 0 {
            return Err(SaeError::Config("n_features must be at least 1".into()));
        }
        if self.k == 0 || self.k > self.n_features {
            return Err(SaeError::Config(format!(
                "k must lie in 1..={} (got {})",
                self.n_features, self.k
            )));
        }
        if !(self.l1_coeff.is_finite() && self.l1_coeff >= 0.0) {
            return Err(SaeError::Config(format!(
                "l1_coeff must be finite and nonnegative (got {})",
                self.l1_coeff
            )));
        }
        Ok(())
    }

    /// `F / D`.
    pub fn expansion(&self) -> f64 {
        self.n_features as f64 / self.d_model as f64
    }

    /// Name following `L[layer][site]-[expansion]x-[variant]`.
    pub fn label(&self, layer: u32, site: Site) -> String {
        let exp = self.expansion();
        let exp = if exp.fract() == 0.0 {
            format!("{}", exp as u64)
        } else {
            format!("{exp:.2}")
        };
        format!("L{layer}{}-{exp}x-{}", site.letter(), self.variant)
    }
}
