//! The `trackflow` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 training divergence. Every run echoes its resolved configuration to
//! standard error as JSON. Log verbosity follows `RUST_LOG`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::catalog::{build_training_sequences, load_catalog, load_model, save_catalog, save_model};
use crate::error::{Error, Result};
use crate::features::{fit_standardizer, generate_synthetic_catalog, SynthSpec};
use crate::playlist::{compare, export_transition_matrix, generate, GenerateConfig, Playlist};
use crate::rnn::{init_model, train, Optimizer, TrainConfig};
use crate::segmentation::{segment_catalog, SegmentationParams, Threshold};
use crate::similarity::Metric;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(name = "trackflow", version, about = "Playlist generation from within-track segment transitions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Write a synthetic catalog with planted clusters and segments.
    Synth(SynthArgs),
    /// Segment every track of a catalog and write it back with segments.
    Segment(SegmentArgs),
    /// Train the sequence model on within-track segment transitions.
    Train(TrainArgs),
    /// Generate one playlist from a seed track.
    Generate(GenerateArgs),
    /// Generate one playlist per metric from the same seed and compare them.
    Compare(CompareArgs),
    /// Export the stacked segment / prediction matrix of a playlist as CSV.
    ExportTransitions(ExportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub tracks: usize,
    #[arg(long, default_value_t = 2)]
    pub clusters: usize,
    #[arg(long, default_value_t = 4)]
    pub segments_min: usize,
    #[arg(long, default_value_t = 9)]
    pub segments_max: usize,
    #[arg(long, default_value_t = 32)]
    pub frames_min: usize,
    #[arg(long, default_value_t = 40)]
    pub frames_max: usize,
    /// Feature dimension (number of tags).
    #[arg(long, default_value_t = 50)]
    pub dim: usize,
    /// Consistently strong dimensions per cluster.
    #[arg(long, default_value_t = 6)]
    pub strong: usize,
    /// Consistently weak dimensions per cluster.
    #[arg(long, default_value_t = 30)]
    pub weak: usize,
    /// Half-width of uniform per-frame noise.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub frame_hop: f64,
    /// JSON file with a full generator spec; overrides the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SegmentArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Checkerboard kernel size in frames (even).
    #[arg(long, default_value_t = 16)]
    pub kernel_size: usize,
    /// Gaussian taper width [default: kernel-size / 4].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Fixed peak threshold [default: mean + 1 stddev of the novelty curve].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Minimum segment length in frames.
    #[arg(long, default_value_t = 4)]
    pub min_segment: usize,
    /// Ignore peaks below this fraction of the kernel's absolute mass.
    #[arg(long, default_value_t = 0.02)]
    pub novelty_floor: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Segmented catalog.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Model file to write.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Hidden units per layer (full scale: 512).
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Context length N in segments (full scale: 50).
    #[arg(long, default_value_t = 8)]
    pub context: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value = "adam", value_parser = ["adam", "sgd"])]
    pub optimizer: String,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    /// Seed for initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standardize each input dimension (z-score) before it enters the network.
    #[arg(long)]
    pub standardize: bool,
    /// Write the per-epoch loss history as CSV (epoch,loss).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricArgs {
    /// DCG depth K [default: feature dimension].
    #[arg(long)]
    pub dcg_depth: Option<usize>,
    /// Cosine distance above which a step is logged as having no near neighbour.
    #[arg(long, default_value_t = 0.5)]
    pub nn_threshold: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Segmented catalog.
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(long)]
    pub seed_track: String,
    #[arg(long, default_value_t = 10)]
    pub length: usize,
    #[arg(long, default_value = "dcg", value_parser = ["cosine", "l2", "dcg"])]
    pub metric: String,
    #[command(flatten)]
    pub metric_args: MetricArgs,
    /// Playlist JSON output [default: stdout].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(long)]
    pub seed_track: String,
    #[arg(long, default_value_t = 10)]
    pub length: usize,
    #[arg(
        long,
        default_value = "cosine,l2,dcg",
        value_delimiter = ',',
        value_parser = ["cosine", "l2", "dcg"]
    )]
    pub metrics: Vec<String>,
    #[command(flatten)]
    pub metric_args: MetricArgs,
    /// Comparison JSON output [default: stdout].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportArgs {
    /// Segmented catalog the playlist was generated from.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Playlist JSON written by `generate`.
    #[arg(long)]
    pub playlist: PathBuf,
    /// CSV output [default: stdout].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Ok(json) = serde_json::to_string(&cli) {
        eprintln!("config: {json}");
    }
    if let Err(msg) = check_paths(&cli.command) {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence { .. } => EXIT_DIVERGED,
                _ => EXIT_DATA,
            }
        }
    }
}

fn check_paths(cmd: &Command) -> std::result::Result<(), String> {
    let (inputs, output): (Vec<&Path>, Option<&Path>) = match cmd {
        Command::Synth(a) => (a.config.iter().map(PathBuf::as_path).collect(), Some(&a.output)),
        Command::Segment(a) => (vec![&a.input], Some(&a.output)),
        Command::Train(a) => (vec![&a.input], Some(&a.output)),
        Command::Generate(a) => (vec![&a.input, &a.model], a.output.as_deref()),
        Command::Compare(a) => (vec![&a.input, &a.model], a.output.as_deref()),
        Command::ExportTransitions(a) => (vec![&a.input, &a.playlist], a.output.as_deref()),
    };
    match output {
        Some(out) if inputs.contains(&out) => Err(format!(
            "output {} would overwrite an input",
            out.display()
        )),
        _ => Ok(()),
    }
}

fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => {
            let spec = match &a.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    serde_json::from_str::<SynthSpec>(&text)?
                }
                None => SynthSpec {
                    tracks: a.tracks,
                    segments: (a.segments_min, a.segments_max),
                    frames_per_segment: (a.frames_min, a.frames_max),
                    dim: a.dim,
                    strong: a.strong,
                    weak: a.weak,
                    clusters: a.clusters,
                    noise: a.noise,
                    seed: a.seed,
                    frame_hop: a.frame_hop,
                },
            };
            let catalog = generate_synthetic_catalog(&spec)?;
            save_catalog(&catalog, &a.output)?;
            log::info!("wrote {} tracks to {}", catalog.len(), a.output.display());
        }
        Command::Segment(a) => {
            let params = SegmentationParams {
                kernel_size: a.kernel_size,
                sigma: a.sigma,
                threshold: a.threshold.map_or(Threshold::MeanPlusStd, Threshold::Fixed),
                min_segment: a.min_segment,
                novelty_floor: a.novelty_floor,
            };
            params.validate()?;
            let catalog = segment_catalog(&load_catalog(&a.input)?, &params)?;
            let segments: usize = catalog.tracks().iter().map(|t| t.segments.len()).sum();
            save_catalog(&catalog, &a.output)?;
            log::info!("{} tracks, {segments} segments", catalog.len());
        }
        Command::Train(a) => {
            let catalog = load_catalog(&a.input)?;
            let config = TrainConfig {
                context_length: a.context,
                epochs: a.epochs,
                learning_rate: a.lr,
                optimizer: a.optimizer.parse::<Optimizer>()?,
                batch_size: a.batch_size,
                seed: a.seed,
                clip_norm: a.clip_norm,
            };
            config.validate()?;
            let pairs = build_training_sequences(&catalog, config.context_length)?;
            if pairs.is_empty() {
                return Err(Error::InvalidParameter(
                    "catalog has no within-track transitions to train on".into(),
                ));
            }
            let mut model = init_model(a.layers, a.hidden, catalog.dim(), a.seed)?;
            if a.standardize {
                model.standardization = Some(fit_standardizer(&catalog)?);
            }
            let (model, report) = train(model, &pairs, &config)?;
            save_model(&model, &a.output)?;
            if let Some(path) = &a.loss_csv {
                let file = File::create(path).map_err(|e| Error::io(path, e))?;
                report.write_csv(BufWriter::new(file))?;
            }
            log::info!(
                "{} pairs, loss {:.6} -> {:.6}",
                pairs.len(),
                report.epoch_losses.first().copied().unwrap_or(f64::NAN),
                report.final_loss
            );
        }
        Command::Generate(a) => {
            let catalog = load_catalog(&a.input)?;
            let model = load_model(&a.model)?;
            let metric = Metric::parse(&a.metric, a.metric_args.dcg_depth.unwrap_or(catalog.dim()))?;
            let config = GenerateConfig {
                nn_threshold: a.metric_args.nn_threshold,
            };
            let playlist = generate(&catalog, &model, &a.seed_track, a.length, metric, &config)?;
            if playlist.truncated {
                log::warn!("catalog exhausted after {} tracks", playlist.len());
            }
            write_output(a.output.as_deref(), playlist.to_json_pretty()?.as_bytes())?;
        }
        Command::Compare(a) => {
            let catalog = load_catalog(&a.input)?;
            let model = load_model(&a.model)?;
            let depth = a.metric_args.dcg_depth.unwrap_or(catalog.dim());
            let metrics = a
                .metrics
                .iter()
                .map(|m| Metric::parse(m, depth))
                .collect::<Result<Vec<_>>>()?;
            let config = GenerateConfig {
                nn_threshold: a.metric_args.nn_threshold,
            };
            let comparison = compare(&catalog, &model, &a.seed_track, a.length, &metrics, &config)?;
            write_output(a.output.as_deref(), serde_json::to_string_pretty(&comparison)?.as_bytes())?;
        }
        Command::ExportTransitions(a) => {
            let catalog = load_catalog(&a.input)?;
            let text = std::fs::read_to_string(&a.playlist).map_err(|e| Error::io(&a.playlist, e))?;
            let playlist = Playlist::from_json(&text)?;
            let matrix = export_transition_matrix(&playlist, &catalog)?;
            let mut buf = Vec::new();
            matrix.write_csv(&mut buf)?;
            write_output(a.output.as_deref(), &buf)?;
        }
    }
    Ok(())
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(path) => {
            let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
            f.write_all(bytes).map_err(|e| Error::io(path, e))?;
            if !bytes.ends_with(b"\n") {
                f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.write_all(b"\n"))
                .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}
