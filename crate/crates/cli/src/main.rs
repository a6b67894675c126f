//! `gesture`: synthesize data, derive labels, train and evaluate models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gesture_core::Error;

#[derive(Debug, Parser)]
#[command(name = "gesture", version, about = "Speech-driven gesture generation toolkit")]
struct Cli {
    /// TOML or JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed applied to every component of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus with ground-truth oracle files.
    SynthData(SynthArgs),
    /// Derive sequence-level saliency labels for a corpus.
    DeriveLabels(DeriveLabelsArgs),
    /// Train the salient posture detector on derived labels.
    TrainDetector(TrainDetectorArgs),
    /// Score every frame of a corpus with a trained detector.
    Detect(DetectArgs),
    /// Train the gesture generator.
    Train(TrainArgs),
    /// Generate a pose sequence for a WAV file.
    Generate(GenerateArgs),
    /// Train the pose/audio sync network used by PSD.
    TrainSyncnet(AuxTrainArgs),
    /// Train the pose autoencoder whose features FGD compares.
    TrainFgdExtractor(AuxTrainArgs),
    /// Compute L2, FGD, BC and PSD on a corpus split.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of sequences.
    #[arg(long)]
    n: Option<usize>,
    /// Frames per sequence.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DeriveLabelsArgs {
    /// Corpus manifest (or a directory containing `manifest.json`).
    #[arg(long)]
    corpus: PathBuf,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainDetectorArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    detector: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Detector checkpoint; without it the consistency loss is unweighted.
    #[arg(long)]
    detector: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many completed epochs, leaving a resumable run.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    audio: PathBuf,
    /// Output GPOS1 file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the sequence as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Precomputed ASR features (CSV), required for models trained with them.
    #[arg(long)]
    asr: Option<PathBuf>,
    /// Speaker whose pose statistics to use.
    #[arg(long)]
    speaker: Option<String>,
}

#[derive(Debug, Args)]
struct AuxTrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output checkpoint file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Generator checkpoint whose output is scored.
    #[arg(long, required_unless_present = "ground_truth", conflicts_with = "ground_truth")]
    checkpoint: Option<PathBuf>,
    /// Score the reference poses against themselves.
    #[arg(long)]
    ground_truth: bool,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_parser = ["train", "val", "test"], default_value = "test")]
    split: String,
    #[arg(long)]
    syncnet: Option<PathBuf>,
    #[arg(long)]
    fgd_extractor: Option<PathBuf>,
    /// Output JSON report.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Argument(_) | Error::Config(_) => 2,
        Error::Io { .. } | Error::Wav { .. } | Error::Provider { .. } => 3,
        Error::Divergence { .. } => 4,
        Error::Corrupt { .. } | Error::Schema { .. } => 5,
        Error::Tensor(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
