//! `gafvit`: synthetic data, clustering labels, GAF images, training,
//! evaluation and single-sample classification.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Degenerate, Grid, Subset};
use crate::config::List;
use crate::error::CliError;
use gafvit::vit::PatchMode;

#[derive(Debug, Parser)]
#[command(name = "gafvit", version, about = "GAF-ViT driving-behavior classification pipeline")]
struct Cli {
    /// Flat `key = value` file with defaults for any long flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic four-regime dataset.
    Synth(SynthArgs),
    /// Label samples by endpoint clustering with an elbow-selected threshold.
    Cluster(ClusterArgs),
    /// Write the GAF channels of samples as PGM images.
    Transform(TransformArgs),
    /// Train a model and save the best-validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its held-out split.
    Eval(EvalArgs),
    /// Classify one feature matrix.
    Classify(ClassifyArgs),
    /// Compare analytic gradients with finite differences on a toy model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct Source {
    /// Directory holding features.csv (and optionally labels.csv).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Raw per-step trip CSV (trip_id,t,speed[,position,accel,jerk,label]).
    #[arg(long, value_name = "FILE")]
    trips: Option<PathBuf>,
    /// `trip_id,class` file; replaces any labels from the data source.
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Samples per regime, comma separated.
    #[arg(long)]
    counts: Option<List<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[command(flatten)]
    source: Source,
    /// Use this threshold instead of elbow selection.
    #[arg(long)]
    theta: Option<f64>,
    /// Elbow grid as start:stop:step.
    #[arg(long)]
    grid: Option<Grid>,
    /// Apply cos() to the cosine ratio before the arccos.
    #[arg(long)]
    literal_cosine: bool,
    /// What to do with samples whose endpoint is the zero vector.
    #[arg(long, value_name = "skip|error")]
    degenerate: Option<Degenerate>,
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TransformArgs {
    #[command(flatten)]
    source: Source,
    /// Only this sample (or both halves of this trip).
    #[arg(long)]
    trip: Option<String>,
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Train, validation and test fractions.
    #[arg(long, value_name = "F,F,F")]
    split: Option<List<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Feed the image to the transformer without channel attention.
    #[arg(long)]
    no_attention: bool,
    /// Replace the GAF encoding with a trainable linear reshape.
    #[arg(long)]
    no_gaf: bool,
    #[arg(long, value_name = "strip-rows|square")]
    patch_mode: Option<PatchMode>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    mlp_dim: Option<usize>,
    #[arg(long)]
    reduction_ratio: Option<usize>,
    /// What to do with samples that have a constant feature column.
    #[arg(long, value_name = "skip|error")]
    degenerate: Option<Degenerate>,
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    source: Source,
    /// Partition to score.
    #[arg(long, value_name = "test|val|train|all")]
    subset: Option<Subset>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_name = "skip|error")]
    degenerate: Option<Degenerate>,
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// features.csv-style file holding exactly one sample.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Data directory to pick the sample from (with --trip).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    #[arg(long)]
    trip: Option<String>,
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Check every n-th entry of each parameter.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(short, long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Synth(a) => commands::synth(a, config),
        Command::Cluster(a) => commands::cluster(a, config),
        Command::Transform(a) => commands::transform(a, config),
        Command::Train(a) => commands::train(a, config),
        Command::Eval(a) => commands::eval(a, config),
        Command::Classify(a) => commands::classify(a, config),
        Command::Gradcheck(a) => commands::gradcheck(a, config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
