use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fable_core::edit::EditMode;

#[derive(Debug, Parser)]
#[command(
    name = "fable",
    version,
    about = "Two-stage knowledge editing on a small decoder-only LM"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a toy model on a corpus file or a generated synthetic world.
    Pretrain(PretrainArgs),
    /// Edit a copy of the base model for every sample.
    Edit(EditArgs),
    /// Score checkpoints on a dataset.
    Eval(EvalArgs),
    /// Edit and score the dataset under several configurations.
    Ablate(AblateArgs),
    /// Stage-two residual-search curves with and without stage one.
    Trajectory(TrajectoryArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON overrides, inline or as a path to a JSON file.
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Worker threads for per-sample work.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Corpus file (`{"items": [{"prompt", "completion"}]}`).
    #[arg(long, required_unless_present = "synthetic")]
    pub dataset: Option<PathBuf>,
    /// Generate a synthetic world with this many edit samples instead of
    /// reading a corpus; the world's dataset is written next to the model.
    #[arg(long, conflicts_with = "dataset")]
    pub synthetic: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Base checkpoint; never modified.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "full", value_parser = parse_mode)]
    pub mode: EditMode,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// A checkpoint file (scored as the unedited model) or a directory
    /// written by `edit`. Repeatable.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

fn parse_mode(s: &str) -> Result<EditMode, String> {
    s.parse()
        .map_err(|e: fable_core::edit::EditError| e.to_string())
}
