// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Cli, Command, CommonFlags, RunConfig};
use crate::activations::{
    write_token_sidecar, ActivationFileReader, ActivationFileWriter, ActivationMeta, ActivationSource, DType,
    MagnitudeDist, ShuffleBuffer, SyntheticDictionary, SyntheticSource,
};
use crate::autointerp::{
    build_prompt, score_all, score_histogram, track_top_contexts, ScoringClient, TrackOptions,
};
use crate::error::{Result, SaeError};
use crate::geometry::{
    cross_sae_matching_cdf_blocked, jl_epsilon, nearest_features, pca_2d, random_max_cosine_blocked,
};
use crate::metrics::{evaluate, firing_stats, LinearSoftmaxReadout, MetricRecord};
use crate::normalize::{calibrate_jumprelu, estimate_norm_factors, fold_norm_into_params, unitize_decoder};
use crate::optimizer::{train, Checkpoint, NormState, TrainOptions, TrainSchedule};
use crate::sae::{PositionKind, SaeConfig, Variant};

const TRAIN_STREAM: u64 = 1000;
const CALIBRATION_STREAM: u64 = 2000;
const EVAL_STREAM: u64 = 3000;
const GEN_CHUNK: usize = 8192;
const READOUT_SCALE: f64 = 4.0;

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::GenSynthetic { common } => gen_synthetic(&load_config(common)?, stdout),
        Command::Train { common } => cmd_train(&load_config(common)?, stdout),
        Command::Postprocess {
            checkpoint,
            calibrate_k,
            common,
        } => {
            let mut cfg = load_config(common)?;
            if calibrate_k.is_some() {
                cfg.calibrate_k = *calibrate_k;
            }
            postprocess(&cfg, checkpoint, stdout)
        }
        Command::Eval { checkpoint, common } => eval(&load_config(common)?, checkpoint, stdout),
        Command::Geometry {
            jl,
            random_baseline,
            checkpoint,
            other,
            query,
            neighbors,
            block,
            common,
        } => {
            let cfg = load_config(common)?;
            geometry(
                &cfg,
                GeometryArgs {
                    jl: jl.as_deref(),
                    random_baseline: random_baseline.as_deref(),
                    checkpoint: checkpoint.as_deref(),
                    other: other.as_deref(),
                    query: *query,
                    neighbors: *neighbors,
                    block: *block,
                },
                stdout,
            )
        }
        Command::Interp {
            checkpoint,
            text,
            features,
            capacity,
            window,
            endpoint,
            model,
            max_in_flight,
            common,
        } => {
            let cfg = load_config(common)?;
            let opts = TrackOptions {
                n_features_sampled: *features,
                capacity: *capacity,
                window: *window,
                seed: cfg.seed,
                max_tokens: Some(cfg.tokens),
                ..TrackOptions::default()
            };
            interp(&cfg, checkpoint, text.as_deref(), &opts, endpoint.as_deref(), model, *max_in_flight, stdout)
        }
    }
}

/// Config file (if any), then flags, then validation and path resolution.
pub fn load_config(flags: &CommonFlags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let mut errors = Vec::new();
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = &flags.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &flags.source {
        cfg.source = v.clone();
    }
    if let Some(v) = flags.tokens {
        cfg.tokens = v;
    }
    if let Some(v) = flags.k {
        cfg.k = v;
    }
    if let Some(v) = flags.expansion {
        cfg.expansion = v;
    }
    if let Some(v) = &flags.variant {
        match v.parse() {
            Ok(x) => cfg.variant = x,
            Err(e) => errors.push(format!("--variant: {e}")),
        }
    }
    if let Some(v) = &flags.position_kind {
        match v.parse() {
            Ok(x) => cfg.position_kind = x,
            Err(e) => errors.push(format!("--position-kind: {e}")),
        }
    }
    if let Err(SaeError::InvalidConfig(mut more)) = cfg.validate() {
        errors.append(&mut more);
    }
    if !errors.is_empty() {
        return Err(SaeError::InvalidConfig(errors));
    }
    cfg.resolve_paths()?;
    Ok(cfg)
}

fn synthetic_dictionary(cfg: &RunConfig) -> Result<SyntheticDictionary> {
    let dict = match &cfg.dictionary {
        Some(path) => SyntheticDictionary::load(path)?,
        None if (cfg.synth_d, cfg.synth_g) == (64, 256) => SyntheticDictionary::default_with_seed(cfg.dict_seed),
        None => SyntheticDictionary::new(
            cfg.synth_d,
            cfg.synth_g,
            5.0 / cfg.synth_g as f64,
            MagnitudeDist::UniformOnInterval { lo: 0.5, hi: 2.0 },
            0.01,
            cfg.dict_seed,
        )?,
    };
    let wants_targets = cfg.position_kind == PositionKind::Transcoder;
    Ok(match (wants_targets, dict.output_directions.is_some()) {
        (true, false) => dict.with_transcoder_targets(),
        (false, true) => SyntheticDictionary {
            output_directions: None,
            ..dict
        },
        _ => dict,
    })
}

fn open_source(cfg: &RunConfig, stream_seed: u64, shuffle: bool) -> Result<Box<dyn ActivationSource>> {
    if cfg.source == "synthetic" {
        return Ok(Box::new(SyntheticSource::new(synthetic_dictionary(cfg)?, stream_seed)));
    }
    let reader = ActivationFileReader::open(&cfg.source)?;
    if shuffle && cfg.buffer_capacity > 0 {
        let cap = cfg.buffer_capacity.min(reader.rows().max(1) as usize);
        return Ok(Box::new(ShuffleBuffer::new(reader, cap, stream_seed)?));
    }
    Ok(Box::new(reader))
}

fn ensure_out(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

fn write_records(path: &Path, records: &[MetricRecord], stdout: &mut dyn Write) -> Result<()> {
    let text: String = records.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, &text)?;
    stdout.write_all(text.as_bytes())?;
    Ok(())
}

fn gen_synthetic(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let out = ensure_out(cfg)?;
    let dict = synthetic_dictionary(cfg)?;
    dict.save(out.join("dictionary.actv"))?;
    let mut source = SyntheticSource::new(dict.clone(), cfg.seed);
    let mut meta = ActivationMeta::new(format!("L{}{}", cfg.layer, cfg.site().letter()), "synthetic");
    meta.extra.insert("dict_seed".into(), dict.seed.to_string());
    let targets = dict.output_directions.is_some();
    let path = out.join("synthetic.actv");
    let mut writer = ActivationFileWriter::create(&path, dict.d_model(), DType::F32, targets, &meta)?;
    let mut tokens = Vec::with_capacity(cfg.tokens as usize);
    let mut left = cfg.tokens as usize;
    while left > 0 {
        let n = left.min(GEN_CHUNK);
        let (batch, codes) = source.synth_sample(n);
        writer.write_batch(&batch)?;
        for c in &codes {
            // name each token after its strongest ground-truth feature
            let top = c.iter().fold(None, |best: Option<(usize, f32)>, (i, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((i, v)),
            });
            tokens.push(match top {
                Some((i, _)) => format!(" g{i}"),
                None => " -".to_owned(),
            });
        }
        left -= n;
    }
    let rows = writer.finish()?;
    write_token_sidecar(out.join("synthetic.tokens"), &tokens)?;
    writeln!(stdout, "rows\t{rows}\t{}", path.display())?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let mut source = open_source(cfg, cfg.seed + TRAIN_STREAM, true)?;
    let d = source.d_model();
    let config = SaeConfig::new(d, d * cfg.expansion, cfg.k, cfg.variant, cfg.position_kind, cfg.l1_coeff)?;
    let total_steps = cfg
        .total_steps
        .unwrap_or((cfg.tokens / cfg.batch_size as u64).max(1) as usize);
    let mut schedule = TrainSchedule::new(total_steps, cfg.batch_size);
    schedule.base_lr = cfg.base_lr;
    if let Some(w) = cfg.warmup_steps {
        schedule.warmup_steps = w;
    }
    if !cfg.k_anneal {
        schedule = schedule.without_k_annealing();
    }
    // A file can be read twice, so its norm pass need not eat training rows.
    let norm_factors = if cfg.source == "synthetic" {
        None
    } else {
        Some(estimate_norm_factors(&mut open_source(cfg, cfg.seed + TRAIN_STREAM, false)?, cfg.norm_samples)?)
    };
    let options = TrainOptions {
        norm_factors,
        norm_samples: cfg.norm_samples,
        log_every: cfg.log_every,
        ..TrainOptions::default()
    };
    let run = train(&config, &schedule, &mut source, cfg.seed, &options)?;
    let label = config.label(cfg.layer, cfg.site());
    let ckpt = Checkpoint {
        label: label.clone(),
        config,
        schedule,
        step_count: run.steps_completed as u64,
        norm: NormState::Pending(run.norm_factors),
        params: run.params,
        adam: Some(run.adam),
    };
    let out = ensure_out(cfg)?;
    let path = out.join(format!("{label}.saef"));
    ckpt.save(&path)?;
    fs::write(out.join(format!("{label}.history.tsv")), run.history.to_tsv())?;
    if let Some(last) = run.history.records.last() {
        let n = last.tokens_seen;
        for r in [
            MetricRecord::new("train_mse", last.mse, n, &label),
            MetricRecord::new("train_l0_mean", last.l0_mean, n, &label),
            MetricRecord::new("fraction_never_fired", last.fraction_never_fired, n, &label),
        ] {
            writeln!(stdout, "{r}")?;
        }
    }
    writeln!(stdout, "checkpoint\t{}", path.display())?;
    Ok(())
}

fn with_variant(label: &str, variant: Variant) -> String {
    match label.rsplit_once('-') {
        Some((stem, _)) => format!("{stem}-{variant}"),
        None => format!("{label}-{variant}"),
    }
}

fn postprocess(cfg: &RunConfig, checkpoint: &Path, stdout: &mut dyn Write) -> Result<()> {
    let mut ckpt = Checkpoint::load(checkpoint)?;
    let mut params = ckpt.params.clone();
    if let NormState::Pending(f) = ckpt.norm {
        params = fold_norm_into_params(&params, &f);
        ckpt.norm = NormState::Folded(f);
    }
    params = unitize_decoder(&params)?;
    let mut config = ckpt.config;
    if let Some(k) = cfg.calibrate_k {
        let mut source = open_source(cfg, cfg.seed + CALIBRATION_STREAM, true)?;
        let theta = calibrate_jumprelu(&mut config, &mut params, &mut source, k, cfg.calibrate_tokens)?;
        config.k = k;
        ckpt.label = with_variant(&ckpt.label, config.variant);
        writeln!(
            stdout,
            "{}",
            MetricRecord::new("theta", f64::from(theta), cfg.calibrate_tokens as u64, &ckpt.label)
        )?;
    }
    ckpt.config = config;
    ckpt.params = params;
    ckpt.adam = None;
    let path = ensure_out(cfg)?.join(format!("{}.post.saef", ckpt.label));
    ckpt.save(&path)?;
    writeln!(stdout, "checkpoint\t{}", path.display())?;
    Ok(())
}

fn eval(cfg: &RunConfig, checkpoint: &Path, stdout: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let sae = ckpt.sae()?;
    let n = cfg.tokens as usize;
    let readout = LinearSoftmaxReadout::random(ckpt.config.d_model, cfg.readout_classes, READOUT_SCALE, cfg.readout_seed);
    let mut source = open_source(cfg, cfg.seed + EVAL_STREAM, false)?;
    let report = evaluate(&sae, &mut source, n, Some(&readout))?;
    let mut again = open_source(cfg, cfg.seed + EVAL_STREAM, false)?;
    let firing = firing_stats(&sae, &mut again, n)?;
    let mut records = report.records(&ckpt.label);
    records.extend(firing.records(&ckpt.label));
    let out = ensure_out(cfg)?;
    write_records(&out.join(format!("{}.eval.tsv", ckpt.label)), &records, stdout)
}

struct GeometryArgs<'a> {
    jl: Option<&'a [String]>,
    random_baseline: Option<&'a [String]>,
    checkpoint: Option<&'a Path>,
    other: Option<&'a Path>,
    query: Option<usize>,
    neighbors: usize,
    block: usize,
}

/// `["F=32768", "D=4096"]` (either order) to `(F, D)`.
fn parse_fd(args: &[String]) -> Result<(usize, usize)> {
    let (mut f, mut d) = (None, None);
    for a in args {
        let bad = || SaeError::Config(format!("expected F=<n> or D=<n>, got {a:?}"));
        let (k, v) = a.split_once('=').ok_or_else(bad)?;
        let v: usize = v.parse().map_err(|_| bad())?;
        match k {
            "F" | "f" => f = Some(v),
            "D" | "d" => d = Some(v),
            _ => return Err(bad()),
        }
    }
    match (f, d) {
        (Some(f), Some(d)) if f >= 2 && d >= 1 => Ok((f, d)),
        _ => Err(SaeError::Config("need F=<n> (at least 2) and D=<n> (at least 1)".into())),
    }
}

fn geometry(cfg: &RunConfig, args: GeometryArgs<'_>, stdout: &mut dyn Write) -> Result<()> {
    let mut did = false;
    let mut jl_records = Vec::new();
    if let Some(fd) = args.jl {
        let (f, d) = parse_fd(fd)?;
        let eps = jl_epsilon(f as f64, d as f64);
        writeln!(stdout, "{eps:.5}")?;
        jl_records.push(MetricRecord::new("jl_epsilon", eps, 0, format!("F={f},D={d}")));
        did = true;
    }
    if let Some(fd) = args.random_baseline {
        let (f, d) = parse_fd(fd)?;
        let m = random_max_cosine_blocked(f, d, cfg.seed, args.block);
        writeln!(stdout, "{m:.4}")?;
        jl_records.push(MetricRecord::new("random_max_cosine", m, 0, format!("F={f},D={d},seed={}", cfg.seed)));
        did = true;
    }
    if !jl_records.is_empty() {
        let text: String = jl_records.iter().map(|r| format!("{r}\n")).collect();
        fs::write(ensure_out(cfg)?.join("jl.tsv"), text)?;
    }
    if let Some(path) = args.checkpoint {
        let a = Checkpoint::load(path)?;
        let mut records = Vec::new();
        if let Some(q) = args.query {
            records.extend(nearest_features(&a.params, q, &a.params, args.neighbors, &a.label)?.records());
        }
        if let Some(other) = args.other {
            let b = Checkpoint::load(other)?;
            let cdf = cross_sae_matching_cdf_blocked(&a.params, &b.params, cfg.seed, args.block)?;
            let source = format!("{}~{}", a.label, b.label);
            records.push(MetricRecord::new("ks_statistic", cdf.ks_statistic(), 0, &source));
            records.extend(cdf.records(&source));
        }
        let out = ensure_out(cfg)?;
        let pca = pca_2d(&a.params, cfg.seed);
        let mut text = String::from("feature\tpc1\tpc2\n");
        for (i, row) in pca.rows().into_iter().enumerate() {
            text.push_str(&format!("{i}\t{}\t{}\n", row[0], row[1]));
        }
        fs::write(out.join(format!("{}.pca.tsv", a.label)), text)?;
        write_records(&out.join(format!("{}.geometry.tsv", a.label)), &records, stdout)?;
        did = true;
    }
    if !did {
        return Err(SaeError::Config("geometry needs --jl, --random-baseline or --checkpoint".into()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn interp(
    cfg: &RunConfig,
    checkpoint: &Path,
    text: Option<&Path>,
    opts: &TrackOptions,
    endpoint: Option<&str>,
    model: &str,
    max_in_flight: usize,
    stdout: &mut dyn Write,
) -> Result<()> {
    if cfg.source == "synthetic" {
        return Err(SaeError::Config(
            "interp needs an activation file with a token sidecar as --source".into(),
        ));
    }
    let text_path: PathBuf = text
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(&cfg.source).with_extension("tokens"));
    if !text_path.exists() {
        return Err(SaeError::Contract(format!(
            "no token text sidecar at {}",
            text_path.display()
        )));
    }
    let tokens = crate::activations::read_token_sidecar(&text_path)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let sae = ckpt.sae()?;
    let mut reader = ActivationFileReader::open(&cfg.source)?;
    reader.expect_d_model(ckpt.config.d_model)?;
    let top = track_top_contexts(&sae, &mut reader, Some(&tokens), opts)?;
    let out = ensure_out(cfg)?;
    let dir = out.join(format!("{}.prompts", ckpt.label));
    fs::create_dir_all(&dir)?;
    let mut prompts = Vec::new();
    for f in &top.features {
        if f.contexts.is_empty() {
            continue;
        }
        let prompt = build_prompt(&f.contexts)?;
        fs::write(dir.join(format!("feature_{}.txt", f.feature)), &prompt)?;
        prompts.push((f.feature, prompt));
    }
    let n = top.tokens_seen;
    writeln!(stdout, "{}", MetricRecord::new("features_tracked", top.features.len() as f64, n, &ckpt.label))?;
    writeln!(stdout, "{}", MetricRecord::new("features_never_fired", top.never_fired().len() as f64, n, &ckpt.label))?;
    writeln!(stdout, "prompts\t{}", dir.display())?;
    if let Some(url) = endpoint {
        let client = ScoringClient::from_env(url, model)?;
        let results = score_all(&client, &prompts, max_in_flight);
        let mut lines = String::new();
        let mut scores = Vec::new();
        for ((feature, _), r) in prompts.iter().zip(results) {
            match r {
                Ok(s) => {
                    lines.push_str(&format!("{feature}\t{}\n", s.score));
                    scores.push(s);
                }
                Err(e) => lines.push_str(&format!("{feature}\terror\t{}\n", e.kind())),
            }
        }
        fs::write(out.join(format!("{}.scores.tsv", ckpt.label)), lines)?;
        let h = score_histogram(&scores);
        for (i, c) in h.counts.iter().enumerate() {
            writeln!(stdout, "{}", MetricRecord::new(format!("score_{}", i + 1), *c as f64, n, &ckpt.label))?;
        }
        writeln!(stdout, "{}", MetricRecord::new("fraction_score_1", h.fraction_score_1, n, &ckpt.label))?;
    }
    Ok(())
}
