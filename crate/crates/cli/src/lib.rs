//! The `nets` command line and the annotation HTTP service.

pub mod commands;
pub mod server;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nets_core::error::Error;
use nets_core::metrics::RoleFilter;

/// Exit status for input that fails validation.
pub const EXIT_INVALID: i32 = 1;
/// Exit status for file, network and other I/O failures.
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "nets", version, about = "Basketball tracking analytics: preprocessing, weak labels and play models")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace); RUST_LOG overrides it.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate raw tracking rows and write them as sorted frames.
    Ingest(IngestArgs),
    /// Split frames into possessions and cut fixed-length play segments.
    Segment(SegmentArgs),
    /// Label every segment with the rule-based pick-and-roll and handoff detectors.
    Weaklabel(WeaklabelArgs),
    /// Generate a scripted corpus with known play types.
    Synth(SynthArgs),
    /// Train the trajectory head on future velocities.
    Pretrain(PretrainArgs),
    /// Train the play-type head on weak or manual labels.
    Finetune(FinetuneArgs),
    /// Score predictions, either from files or from a checkpoint.
    Evaluate(EvaluateArgs),
    /// Write the pooled play embeddings of a classification checkpoint.
    ExportEmbeddings(ExportArgs),
    /// Serve the annotation API for manual labeling.
    AnnotateServe(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw tracking file (CSV or JSONL).
    #[arg(long)]
    pub input: PathBuf,
    /// Input format; guessed from the extension when absent.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Frames output (JSONL).
    #[arg(long)]
    pub output: PathBuf,
    /// Optional CSV listing rejected rows and reasons.
    #[arg(long)]
    pub rejects: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Frames file from `ingest` (or any CSV/JSONL tracking file).
    #[arg(long)]
    pub frames: PathBuf,
    /// Segment store output (JSONL).
    #[arg(long)]
    pub output: PathBuf,
    /// Keep every n-th frame.
    #[arg(long, default_value_t = 3)]
    pub downsample: usize,
    /// Input steps per segment.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Future steps per segment.
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    /// Shortest possession kept, in seconds.
    #[arg(long, default_value_t = 3.0)]
    pub min_possession_s: f64,
}

#[derive(Debug, Args)]
pub struct WeaklabelArgs {
    #[arg(long)]
    pub segments: PathBuf,
    /// Flat `key = value` file overriding rule thresholds.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Label file output (JSONL).
    #[arg(long)]
    pub output: PathBuf,
    /// Key-frame audit CSV; defaults to the output path with `.audit.csv`.
    #[arg(long)]
    pub audit: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for frames.jsonl, segments.jsonl and truth.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub pick_and_roll: usize,
    #[arg(long, default_value_t = 100)]
    pub handoff: usize,
    #[arg(long, default_value_t = 50)]
    pub spread: usize,
    #[arg(long, default_value_t = 50)]
    pub random_walk: usize,
    /// Position noise in feet.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitByArg {
    Possession,
    Segment,
}

/// Flags shared by both training stages.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Segment store.
    #[arg(long)]
    pub segments: PathBuf,
    /// Checkpoint output.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch run log (JSONL); defaults to the checkpoint path with `.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Architecture preset: full, full-deep, desk or gradcheck.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// JSON network configuration; replaces the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from this checkpoint. A trajectory checkpoint gets a new head.
    #[arg(long)]
    pub from_checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// How the 80/10/10 split groups segments.
    #[arg(long, value_enum, default_value = "possession")]
    pub split_by: SplitByArg,
    /// Seed of the train/validation/test split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Write the split here as JSON.
    #[arg(long)]
    pub split_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StageArg {
    FinetuneWeak,
    FinetuneManual,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Training labels (weak or manual).
    #[arg(long)]
    pub labels: PathBuf,
    /// Validation labels; defaults to `--labels`.
    #[arg(long)]
    pub val_labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "finetune-weak")]
    pub stage: StageArg,
    /// Use only segments that have a label instead of requiring one for every
    /// segment of the split (for small manual label sets).
    #[arg(long)]
    pub labeled_only: bool,
    /// Keep all `other` segments instead of downsampling to the pick-and-roll count.
    #[arg(long)]
    pub no_balance: bool,
    /// Class weights as `a,b,c`; inverse class frequency when absent.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoleArg {
    All,
    Players,
    Offense,
    Defense,
}

impl From<RoleArg> for RoleFilter {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::All => RoleFilter::All,
            RoleArg::Players => RoleFilter::Players,
            RoleArg::Offense => RoleFilter::Offense,
            RoleArg::Defense => RoleFilter::Defense,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Reference labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Predicted labels to compare against `--labels`.
    #[arg(long, conflicts_with = "checkpoint")]
    pub pred: Option<PathBuf>,
    /// Checkpoint to run on `--segments`.
    #[arg(long, requires = "segments")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub segments: Option<PathBuf>,
    /// Evaluate only the segments of this split file's test part.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Objects counted in ADE and FDE.
    #[arg(long, value_enum, default_value = "all")]
    pub roles: RoleArg,
    /// Write the classifier's predictions as a label file.
    #[arg(long)]
    pub pred_out: Option<PathBuf>,
    /// Write the metrics JSON here as well as to standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub segments: PathBuf,
    /// Labels to attach to each row.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// CSV output.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub weak_labels: PathBuf,
    /// Manual label file; appended to, created when missing.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 8701)]
    pub port: u16,
    /// Segments per weak class in the queue.
    #[arg(long, default_value_t = 100)]
    pub quota: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory of the browser client's static files.
    #[arg(long)]
    pub assets: Option<PathBuf>,
}

/// Maps an error to the documented exit status.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        EXIT_IO
    } else {
        EXIT_INVALID
    }
}

/// Parses `argv` and runs the command, returning the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .format_timestamp(None)
        .try_init();
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
