// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat `key=value` run configuration.
//!
//! One entry per line; blank lines and lines starting with `#` are skipped.
//! Unknown keys and unparsable values are all collected and reported
//! together.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, SaeError};
use crate::sae::{PositionKind, Site, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub position_kind: PositionKind,
    pub k: usize,
    pub expansion: usize,
    pub l1_coeff: f64,
    /// Tokens to train on, or to evaluate / calibrate / generate, depending
    /// on the command.
    pub tokens: u64,
    /// Overrides `tokens / batch_size` when set.
    pub total_steps: Option<usize>,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: Option<usize>,
    pub k_anneal: bool,
    pub seed: u64,
    /// `synthetic` or the path of an activation file.
    pub source: String,
    /// Dictionary file for `synthetic`; the default dictionary is used when unset.
    pub dictionary: Option<PathBuf>,
    pub dict_seed: u64,
    pub out: PathBuf,
    pub layer: u32,
    pub site: Option<Site>,
    pub norm_samples: usize,
    pub log_every: usize,
    /// Shuffle-buffer capacity for file sources; 0 reads the file in order.
    pub buffer_capacity: usize,
    pub calibrate_k: Option<usize>,
    pub calibrate_tokens: usize,
    pub readout_classes: usize,
    pub readout_seed: u64,
    pub synth_d: usize,
    pub synth_g: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::TopK,
            position_kind: PositionKind::Autoencoder,
            k: 5,
            expansion: 8,
            l1_coeff: 1e-2,
            tokens: 1_000_000,
            total_steps: None,
            batch_size: 1024,
            base_lr: crate::optimizer::DEFAULT_BASE_LR,
            warmup_steps: None,
            k_anneal: true,
            seed: 0,
            source: "synthetic".into(),
            dictionary: None,
            dict_seed: 0,
            out: PathBuf::from("out"),
            layer: 0,
            site: None,
            norm_samples: crate::normalize::DEFAULT_NORM_SAMPLES,
            log_every: 10,
            buffer_capacity: crate::activations::DEFAULT_BUFFER_CAPACITY,
            calibrate_k: None,
            calibrate_tokens: 100_000,
            readout_classes: 16,
            readout_seed: 0,
            synth_d: 64,
            synth_g: 256,
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "variant",
    "position_kind",
    "k",
    "expansion",
    "l1_coeff",
    "tokens",
    "total_steps",
    "batch_size",
    "base_lr",
    "warmup_steps",
    "k_anneal",
    "seed",
    "source",
    "dictionary",
    "dict_seed",
    "out",
    "layer",
    "site",
    "norm_samples",
    "log_every",
    "buffer_capacity",
    "calibrate_k",
    "calibrate_tokens",
    "readout_classes",
    "readout_seed",
    "synth_d",
    "synth_g",
];

fn parse<T: FromStr>(key: &str, value: &str, errors: &mut Vec<String>) -> Option<T> {
    match value.parse() {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(format!("{key}: cannot parse {value:?}"));
            None
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Apply `key=value` lines over the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut errors = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => self.set(k.trim(), v.trim(), &mut errors),
                None => errors.push(format!("line {}: expected key=value, got {line:?}", n + 1)),
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(SaeError::InvalidConfig(errors))
        }
    }

    fn set(&mut self, key: &str, v: &str, errors: &mut Vec<String>) {
        macro_rules! put {
            ($field:ident) => {
                if let Some(x) = parse(key, v, errors) {
                    self.$field = x;
                }
            };
            (opt $field:ident) => {
                if let Some(x) = parse(key, v, errors) {
                    self.$field = Some(x);
                }
            };
        }
        match key {
            "variant" => match v.parse::<Variant>() {
                Ok(Variant::JumpRelu) => errors.push("variant: JumpReLU is produced by postprocess, not trained".into()),
                Ok(x) => self.variant = x,
                Err(_) => errors.push(format!("variant: expected vanilla or topk, got {v:?}")),
            },
            "position_kind" => match v.parse() {
                Ok(x) => self.position_kind = x,
                Err(_) => errors.push(format!("position_kind: expected sae or transcoder, got {v:?}")),
            },
            "site" => match v.parse() {
                Ok(x) => self.site = Some(x),
                Err(_) => errors.push(format!("site: expected R, A, M or TC, got {v:?}")),
            },
            "k" => put!(k),
            "expansion" => put!(expansion),
            "l1_coeff" => put!(l1_coeff),
            "tokens" => put!(tokens),
            "total_steps" => put!(opt total_steps),
            "batch_size" => put!(batch_size),
            "base_lr" => put!(base_lr),
            "warmup_steps" => put!(opt warmup_steps),
            "k_anneal" => put!(k_anneal),
            "seed" => put!(seed),
            "source" => self.source = v.to_owned(),
            "dictionary" => self.dictionary = Some(PathBuf::from(v)),
            "dict_seed" => put!(dict_seed),
            "out" => self.out = PathBuf::from(v),
            "layer" => put!(layer),
            "norm_samples" => put!(norm_samples),
            "log_every" => put!(log_every),
            "buffer_capacity" => put!(buffer_capacity),
            "calibrate_k" => put!(opt calibrate_k),
            "calibrate_tokens" => put!(calibrate_tokens),
            "readout_classes" => put!(readout_classes),
            "readout_seed" => put!(readout_seed),
            "synth_d" => put!(synth_d),
            "synth_g" => put!(synth_g),
            other => errors.push(format!("unknown key {other:?}")),
        }
    }

    /// Site used in the label; transcoders always use `TC`.
    pub fn site(&self) -> Site {
        match self.position_kind {
            PositionKind::Transcoder => Site::Transcoder,
            PositionKind::Autoencoder => self.site.filter(|s| *s != Site::Transcoder).unwrap_or(Site::Residual),
        }
    }

    /// Value checks that do not depend on the data source.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errors.push(msg.to_owned());
            }
        };
        need(self.k >= 1, "k: must be at least 1");
        need(self.expansion >= 1, "expansion: must be at least 1");
        need(self.batch_size >= 1, "batch_size: must be at least 1");
        need(self.tokens >= 1, "tokens: must be at least 1");
        need(self.base_lr.is_finite() && self.base_lr > 0.0, "base_lr: must be finite and positive");
        need(self.l1_coeff.is_finite() && self.l1_coeff >= 0.0, "l1_coeff: must be finite and nonnegative");
        need(self.norm_samples >= 1, "norm_samples: must be at least 1");
        need(self.log_every >= 1, "log_every: must be at least 1");
        need(self.readout_classes >= 2, "readout_classes: must be at least 2");
        need(self.synth_g > self.synth_d && self.synth_d >= 1, "synth_g: must exceed synth_d");
        need(self.calibrate_k != Some(0), "calibrate_k: must be at least 1");
        if self.site == Some(Site::Transcoder) && self.position_kind != PositionKind::Transcoder {
            errors.push("site: TC requires position_kind=transcoder".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(SaeError::InvalidConfig(errors))
        }
    }

    /// Make `out`, `dictionary` and file sources absolute against the
    /// current directory.
    pub fn resolve_paths(&mut self) -> Result<()> {
        self.out = std::path::absolute(&self.out)?;
        if let Some(d) = &self.dictionary {
            self.dictionary = Some(std::path::absolute(d)?);
        }
        if self.source != "synthetic" {
            self.source = std::path::absolute(&self.source)?.to_string_lossy().into_owned();
        }
        Ok(())
    }
}
