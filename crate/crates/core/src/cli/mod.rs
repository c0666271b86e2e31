// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `saekit` command line.
//!
//! Every command writes its outputs under `--out`, named after the SAE label
//! (`L<layer><site>-<expansion>x-<variant>`):
//!
//! | command         | outputs                                                        |
//! |-----------------|----------------------------------------------------------------|
//! | `gen-synthetic` | `synthetic.actv`, `synthetic.tokens`, `dictionary.actv`        |
//! | `train`         | `<label>.saef`, `<label>.history.tsv`                          |
//! | `postprocess`   | `<label>.post.saef` (label ends in `JumpReLU` when calibrated) |
//! | `eval`          | `<label>.eval.tsv`                                             |
//! | `geometry`      | `<label>.geometry.tsv`, `<label>.pca.tsv`, `jl.tsv`            |
//! | `interp`        | `<label>.prompts/feature_<i>.txt`, `<label>.scores.tsv`        |
//!
//! Metric files hold one `name<TAB>value<TAB>n_tokens<TAB>source` record per
//! line. Failures print a single `error: kind=<kind> msg=<message>` line and
//! exit nonzero.
//!
//! Synthetic streams are seeded per command so evaluation never reuses
//! training rows: training reads stream `seed + 1000`, calibration
//! `seed + 2000`, evaluation and interpretation `seed + 3000`, and
//! `gen-synthetic` writes stream `seed`.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run;
pub use config::{RunConfig, KEYS};

use crate::error::SaeError;

#[derive(Debug, Parser)]
#[command(name = "saekit", version, about = "Sparse autoencoder toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command; they override values from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonFlags {
    /// Flat key=value run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `synthetic` or an activation file.
    #[arg(long, global = true)]
    pub source: Option<String>,
    #[arg(long, global = true)]
    pub tokens: Option<u64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub expansion: Option<usize>,
    #[arg(long, global = true, value_parser = ["vanilla", "topk"])]
    pub variant: Option<String>,
    #[arg(long = "position-kind", global = true, value_parser = ["sae", "transcoder"])]
    pub position_kind: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic activation file, its token text and the dictionary.
    GenSynthetic {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Train an SAE and save the checkpoint and training history.
    Train {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Fold normalization, unitize the decoder and optionally calibrate JumpReLU.
    Postprocess {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Calibrate a JumpReLU threshold for this many active features.
        #[arg(long)]
        calibrate_k: Option<usize>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Evaluate a checkpoint: L0, explained variance, MSE, delta loss, firing stats.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Decoder geometry: JL threshold, random baseline, neighbors, matching CDF.
    Geometry {
        /// Print the JL threshold for `F=<n> D=<n>`.
        #[arg(long, num_args = 2, value_names = ["F=N", "D=N"])]
        jl: Option<Vec<String>>,
        /// Max pairwise cosine of random unit vectors for `F=<n> D=<n>`.
        #[arg(long, num_args = 2, value_names = ["F=N", "D=N"])]
        random_baseline: Option<Vec<String>>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Second checkpoint for the cross-SAE matching CDF.
        #[arg(long)]
        other: Option<PathBuf>,
        /// Feature whose neighbors to list.
        #[arg(long)]
        query: Option<usize>,
        #[arg(long, default_value_t = 6)]
        neighbors: usize,
        /// Rows per matrix-product tile.
        #[arg(long, default_value_t = crate::geometry::DEFAULT_BLOCK)]
        block: usize,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Collect top-activating contexts, write scoring prompts, optionally score.
    Interp {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Token text sidecar; defaults to the source path with a `.tokens` extension.
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        features: usize,
        #[arg(long, default_value_t = 20)]
        capacity: usize,
        #[arg(long, default_value_t = 25)]
        window: usize,
        /// Send prompts to this chat-completion endpoint.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "gpt-4o")]
        model: String,
        #[arg(long, default_value_t = crate::autointerp::DEFAULT_MAX_IN_FLIGHT)]
        max_in_flight: usize,
        #[command(flatten)]
        common: CommonFlags,
    },
}

/// `error: kind=<kind> msg=<message>` on one line.
pub fn error_line(err: &SaeError) -> String {
    let msg = err.to_string().replace(['\n', '\r'], " ");
    format!("error: kind={} msg={msg}", err.kind())
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let first = e.to_string().lines().next().unwrap_or_default().to_owned();
            let _ = writeln!(stderr, "error: kind=usage msg={}", first.trim_start_matches("error: "));
            return 2;
        }
        Err(e) => {
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    match run(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_line(&e));
            1
        }
    }
}
