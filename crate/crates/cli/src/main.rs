//! `onset-tte`: synthesize datasets, train, detect onsets and evaluate.
//!
//! Every command accepts `--config FILE` with a JSON object whose keys are the
//! command's long option names in snake_case; flags given on the command line
//! win over the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use onset_tte::datagen::{self, EventKind, LoadedClip, SynthSpec};
use onset_tte::dist::Family;
use onset_tte::dsp::{build_features, wav};
use onset_tte::eval::{default_delta_grid, summary_table, EvalReport};
use onset_tte::inference::{CdfPoint, PeakPickConfig};
use onset_tte::io::{format_onset_list, write_atomic};
use onset_tte::pipeline::{self, ProtocolConfig, ScoringConfig};
use onset_tte::predictor::{ModelConfig, Network, Variant};
use onset_tte::targets::OnsetAnnotation;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const RESOLVED_CONFIG_FILE: &str = "config.json";

#[derive(Parser)]
#[command(
    name = "onset-tte",
    version,
    about = "Onset detection with time-to-event distributions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic clips with exact onset annotations.
    Synth(SynthOpts),
    /// Train a model on a dataset directory.
    Train(TrainOpts),
    /// Detect onsets in one audio file.
    Detect(DetectOpts),
    /// Score a checkpoint, or run k-fold cross-validation.
    Eval(EvalOpts),
}

/// Fills every `None` field of `self` from `other`.
macro_rules! merge_fields {
    ($a:expr, $b:expr; $($f:ident),* $(,)?) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f; } )*
    };
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Option<PathBuf>) -> Result<Option<T>> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(cfg))
}

fn print_resolved<T: Serialize>(command: &str, cfg: &T) -> Result<String> {
    let json = serde_json::to_string_pretty(cfg)?;
    eprintln!("{command} configuration:\n{json}");
    Ok(json + "\n")
}

#[derive(Args, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthOpts {
    /// JSON file with option defaults.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Clip length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Onsets per second.
    #[arg(long)]
    density: Option<f64>,
    /// Minimum inter-onset gap in seconds.
    #[arg(long)]
    min_gap: Option<f64>,
    /// click, tone or noise_burst.
    #[arg(long)]
    kind: Option<EventKind>,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of clips.
    #[arg(long)]
    clips: Option<usize>,
}

#[derive(Serialize)]
struct SynthRun {
    out: PathBuf,
    clips: usize,
    spec: SynthSpec,
}

fn cmd_synth(mut opts: SynthOpts) -> Result<()> {
    if let Some(file) = read_config::<SynthOpts>(&opts.config)? {
        merge_fields!(opts, file; out, duration, density, min_gap, kind, snr_db, seed, clips);
    }
    let d = SynthSpec::default();
    let run = SynthRun {
        out: opts.out.context("--out is required")?,
        clips: opts.clips.unwrap_or(1),
        spec: SynthSpec {
            duration: opts.duration.unwrap_or(d.duration),
            density: opts.density.unwrap_or(d.density),
            min_gap: opts.min_gap.unwrap_or(d.min_gap),
            kind: opts.kind.unwrap_or(d.kind),
            snr_db: opts.snr_db.unwrap_or(d.snr_db),
            seed: opts.seed.unwrap_or(d.seed),
            sample_rate: d.sample_rate,
        },
    };
    print_resolved("synth", &run)?;
    run.spec.validate()?;
    let manifest = datagen::write_synthetic_dataset(&run.out, &run.spec, run.clips)?;
    eprintln!("wrote {} clips to {}", manifest.len(), run.out.display());
    Ok(())
}

/// Model and training options shared by `train` and `eval`.
#[derive(Args, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelOpts {
    /// proposed or baseline.
    #[arg(long)]
    variant: Option<Variant>,
    /// loglogistic or pareto.
    #[arg(long)]
    family: Option<Family>,
    /// TTE/TSE threshold in frames.
    #[arg(long)]
    threshold: Option<u32>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Frames drawn per epoch (default: all).
    #[arg(long)]
    samples_per_epoch: Option<usize>,
    /// Fraction of training clips held out for best-epoch selection.
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Cap on validation frames per epoch (default: all).
    #[arg(long)]
    val_frames: Option<usize>,
}

impl ModelOpts {
    fn merge(&mut self, file: ModelOpts) {
        merge_fields!(self, file; variant, family, threshold, gamma, epochs, lr, batch_size, dropout, seed,
            samples_per_epoch, val_fraction, val_frames);
    }

    fn resolve(&self, base: ModelConfig) -> ModelConfig {
        ModelConfig {
            variant: self.variant.unwrap_or(base.variant),
            family: self.family.unwrap_or(base.family),
            threshold: self.threshold.unwrap_or(base.threshold),
            gamma: self.gamma.unwrap_or(base.gamma),
            epochs: self.epochs.unwrap_or(base.epochs),
            lr: self.lr.unwrap_or(base.lr),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            dropout: self.dropout.unwrap_or(base.dropout),
            seed: self.seed.unwrap_or(base.seed),
            samples_per_epoch: self.samples_per_epoch.or(base.samples_per_epoch),
            val_fraction: self.val_fraction.unwrap_or(base.val_fraction),
            val_frames: self.val_frames.or(base.val_frames),
        }
    }
}

/// Peak-picking options shared by `detect` and `eval`.
#[derive(Args, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PeakOpts {
    #[arg(long)]
    pre_max_ms: Option<f64>,
    #[arg(long)]
    post_max_ms: Option<f64>,
    #[arg(long)]
    pre_avg_ms: Option<f64>,
    #[arg(long)]
    post_avg_ms: Option<f64>,
    #[arg(long)]
    wait_ms: Option<f64>,
    /// CDF point for the within-one-frame probabilities: two or one.
    #[arg(long, value_parser = parse_cdf_point)]
    #[serde(default, deserialize_with = "de_cdf_point")]
    cdf_point: Option<CdfPoint>,
}

fn parse_cdf_point(s: &str) -> Result<CdfPoint, String> {
    match s {
        "two" | "2" => Ok(CdfPoint::Two),
        "one" | "1" => Ok(CdfPoint::One),
        _ => Err(format!("unknown cdf point {s:?} (expected two or one)")),
    }
}

fn de_cdf_point<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<CdfPoint>, D::Error> {
    Option::<CdfPoint>::deserialize(d)
}

impl PeakOpts {
    fn merge(&mut self, file: PeakOpts) {
        merge_fields!(self, file; pre_max_ms, post_max_ms, pre_avg_ms, post_avg_ms, wait_ms, cdf_point);
    }

    fn resolve(&self, delta: f64) -> PeakPickConfig {
        let d = PeakPickConfig::default();
        PeakPickConfig {
            pre_max_ms: self.pre_max_ms.unwrap_or(d.pre_max_ms),
            post_max_ms: self.post_max_ms.unwrap_or(d.post_max_ms),
            pre_avg_ms: self.pre_avg_ms.unwrap_or(d.pre_avg_ms),
            post_avg_ms: self.post_avg_ms.unwrap_or(d.post_avg_ms),
            wait_ms: self.wait_ms.unwrap_or(d.wait_ms),
            delta,
        }
    }
}

fn load_data(data: &Path, cache: Option<&Path>) -> Result<Vec<LoadedClip>> {
    let scanned = datagen::load_dataset(data)?;
    for p in &scanned.unpaired {
        eprintln!("warning: skipping unpaired file {}", p.display());
    }
    let clips = datagen::load_clips(data, &scanned.manifest, cache)?;
    for c in &clips {
        for w in &c.warnings {
            eprintln!("warning: {w}");
        }
    }
    eprintln!("loaded {} clips from {}", clips.len(), data.display());
    Ok(clips)
}

#[derive(Args, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOpts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for the checkpoint, trace and resolved config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Feature cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelOpts,
}

#[derive(Serialize)]
struct TrainRun {
    data: PathBuf,
    out: PathBuf,
    cache: Option<PathBuf>,
    model: ModelConfig,
}

fn cmd_train(mut opts: TrainOpts) -> Result<()> {
    if let Some(file) = read_config::<TrainOpts>(&opts.config)? {
        merge_fields!(opts, file; data, out, cache);
        opts.model.merge(file.model);
    }
    let run = TrainRun {
        data: opts.data.context("--data is required")?,
        out: opts.out.context("--out is required")?,
        cache: opts.cache,
        model: opts.model.resolve(ModelConfig::default()),
    };
    let resolved = print_resolved("train", &run)?;
    run.model.validate()?;
    let clips = load_data(&run.data, run.cache.as_deref())?;
    let refs: Vec<&LoadedClip> = clips.iter().collect();
    let (net, report) = pipeline::fit(&refs, &run.model, &ScoringConfig::default(), |s| {
        eprintln!(
            "epoch {:>4}  train {:.5}  val {}  momentum {:.3}",
            s.epoch,
            s.train_loss,
            s.val_loss.map_or("-".to_string(), |v| format!("{v:.5}")),
            s.momentum
        )
    })?;
    write_atomic(&run.out.join(RESOLVED_CONFIG_FILE), resolved.as_bytes())?;
    write_atomic(&run.out.join(TRACE_FILE), report.to_csv().as_bytes())?;
    net.save(&run.out.join(CHECKPOINT_FILE))?;
    eprintln!(
        "kept epoch {}; best delta {}; wrote {}",
        report.best_epoch,
        net.meta.best_delta.map_or("-".to_string(), |d| format!("{d:.2}")),
        run.out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

#[derive(Args, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectOpts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// WAV file.
    #[arg(long)]
    audio: Option<PathBuf>,
    /// Output onset list (one time in seconds per line).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Threshold offset; defaults to the value tuned during training.
    #[arg(long)]
    delta: Option<f64>,
    /// Apply 5-point Hamming smoothing to the detection function.
    #[arg(long)]
    #[serde(default)]
    smooth: bool,
    #[command(flatten)]
    #[serde(flatten)]
    peak: PeakOpts,
}

#[derive(Serialize)]
struct DetectRun {
    checkpoint: PathBuf,
    audio: PathBuf,
    out: PathBuf,
    smooth: bool,
    cdf_point: CdfPoint,
    peak: PeakPickConfig,
}

fn cmd_detect(mut opts: DetectOpts) -> Result<()> {
    if let Some(file) = read_config::<DetectOpts>(&opts.config)? {
        merge_fields!(opts, file; checkpoint, audio, out, delta);
        opts.smooth |= file.smooth;
        opts.peak.merge(file.peak);
    }
    let checkpoint = opts.checkpoint.context("--checkpoint is required")?;
    let net = Network::<f64>::load(&checkpoint)?;
    let delta = opts
        .delta
        .or(net.meta.best_delta)
        .unwrap_or(PeakPickConfig::default().delta);
    let run = DetectRun {
        checkpoint,
        audio: opts.audio.context("--audio is required")?,
        out: opts.out.context("--out is required")?,
        smooth: opts.smooth,
        cdf_point: opts.peak.cdf_point.unwrap_or_default(),
        peak: opts.peak.resolve(delta),
    };
    print_resolved("detect", &run)?;
    let audio = wav::read_wav(&run.audio)?;
    let clip = LoadedClip {
        id: String::new(),
        features: build_features(&audio)?,
        annotation: OnsetAnnotation::new(Vec::new())?,
        warnings: Vec::new(),
    };
    let onsets = pipeline::detect(&net, &clip, &run.peak, run.smooth, run.cdf_point)?;
    write_atomic(&run.out, format_onset_list(&onsets).as_bytes())?;
    eprintln!("{} onsets written to {}", onsets.len(), run.out.display());
    Ok(())
}

#[derive(Args, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalOpts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for the report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model to score. With --folds its configuration seeds every fold.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Run k-fold cross-validation, training a model per fold.
    #[arg(long)]
    folds: Option<usize>,
    /// Seed of the fold assignment.
    #[arg(long)]
    fold_seed: Option<u64>,
    /// Comma-separated thresholds for cross-validation.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<u32>>,
    /// Comma-separated families for cross-validation.
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<Family>>,
    /// Skip the binary baseline in cross-validation.
    #[arg(long)]
    #[serde(default)]
    no_baseline: bool,
    /// Comma-separated threshold offsets to sweep.
    #[arg(long, value_delimiter = ',')]
    delta_grid: Option<Vec<f64>>,
    /// Matching tolerance in seconds.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    peak: PeakOpts,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelOpts,
}

#[derive(Serialize)]
struct EvalRun {
    data: PathBuf,
    out: PathBuf,
    checkpoint: Option<PathBuf>,
    cache: Option<PathBuf>,
    protocol: ProtocolConfig,
}

fn model_name(cfg: &ModelConfig) -> String {
    match (cfg.variant, cfg.family) {
        (Variant::Baseline, _) => "Baseline".into(),
        (Variant::Proposed, Family::LogLogistic) => "LogLogistic".into(),
        (Variant::Proposed, Family::Pareto) => "Pareto".into(),
    }
}

fn cmd_eval(mut opts: EvalOpts) -> Result<()> {
    if let Some(file) = read_config::<EvalOpts>(&opts.config)? {
        merge_fields!(opts, file; data, out, checkpoint, folds, fold_seed, thresholds, families, delta_grid,
            tolerance, cache);
        opts.no_baseline |= file.no_baseline;
        opts.peak.merge(file.peak);
        opts.model.merge(file.model);
    }
    let net = match &opts.checkpoint {
        Some(p) => Some(Network::<f64>::load(p)?),
        None => None,
    };
    let base_model = net.as_ref().map_or_else(ModelConfig::default, |n| n.config().clone());
    let defaults = ProtocolConfig::default();
    let run = EvalRun {
        data: opts.data.context("--data is required")?,
        out: opts.out.context("--out is required")?,
        checkpoint: opts.checkpoint.clone(),
        cache: opts.cache.clone(),
        protocol: ProtocolConfig {
            model: opts.model.resolve(base_model),
            thresholds: opts.thresholds.clone().unwrap_or(defaults.thresholds),
            families: opts.families.clone().unwrap_or(defaults.families),
            include_baseline: !opts.no_baseline,
            folds: opts.folds.unwrap_or(0),
            seed: opts.fold_seed.unwrap_or(defaults.seed),
            scoring: ScoringConfig {
                peak: opts.peak.resolve(PeakPickConfig::default().delta),
                grid: opts.delta_grid.clone().unwrap_or_else(default_delta_grid),
                tolerance: opts.tolerance.unwrap_or(defaults.scoring.tolerance),
                cdf_point: opts.peak.cdf_point.unwrap_or_default(),
            },
        },
    };
    let resolved = print_resolved("eval", &run)?;
    if run.protocol.scoring.grid.is_empty() {
        bail!("the delta grid is empty");
    }
    let grid_line = format!(
        "delta grid ({} values): {}",
        run.protocol.scoring.grid.len(),
        run.protocol
            .scoring
            .grid
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    eprintln!("{grid_line}");
    let clips = load_data(&run.data, run.cache.as_deref())?;
    let reports: Vec<EvalReport> = if run.protocol.folds > 0 {
        run.protocol.model.validate()?;
        pipeline::run_protocol(&clips, &run.protocol, |line| eprintln!("{line}"))?
    } else {
        let Some(net) = &net else {
            bail!("eval needs --checkpoint, --folds, or both");
        };
        let refs: Vec<&LoadedClip> = clips.iter().collect();
        let result = pipeline::score(net, &refs, 0, &run.protocol.scoring)?;
        vec![EvalReport {
            model: model_name(net.config()),
            threshold: (net.variant() == Variant::Proposed).then_some(net.config().threshold),
            folds: vec![result],
        }]
    };
    let mut csv = EvalReport::csv_header().to_string();
    for r in &reports {
        csv.push_str(&r.csv_rows());
    }
    let summary = format!("{grid_line}\n\n{}", summary_table(&reports));
    write_atomic(&run.out.join(RESOLVED_CONFIG_FILE), resolved.as_bytes())?;
    write_atomic(&run.out.join(REPORT_FILE), csv.as_bytes())?;
    write_atomic(&run.out.join(SUMMARY_FILE), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Synth(o) => cmd_synth(o),
        Command::Train(o) => cmd_train(o),
        Command::Detect(o) => cmd_detect(o),
        Command::Eval(o) => cmd_eval(o),
    }
}
