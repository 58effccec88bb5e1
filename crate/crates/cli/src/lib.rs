//! Command-line surface: `synth`, `train`, `separate`, `eval` and `oracle`.
//!
//! Stem directories hold one `<instrument>.wav` per instrument class, in the
//! snake_case names used by manifests and label files.

mod commands;
mod stems;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit code for malformed command lines.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures inside a command.
pub const EXIT_FAILURE: i32 = 1;
/// Environment variable supplying the default seed.
pub const SEED_ENV: &str = "CUNET_SEED";

#[derive(Debug, Parser)]
#[command(name = "cunet-cli", version, about = "Conditioned U-Net music source separation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mix random segments of a manifest's recordings into a mixture and its stems.
    Synth(SynthArgs),
    /// Train a model from a preset or JSON config.
    Train(TrainArgs),
    /// Separate a mixture with a trained checkpoint.
    Separate(SeparateArgs),
    /// Score estimated stems against references.
    Eval(EvalArgs),
    /// Reconstruct stems with ideal masks computed from the references.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Manifest of isolated recordings.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory receiving mixture.wav, the stems and labels.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of instruments in the mixture.
    #[arg(long, default_value_t = 2)]
    sources: usize,
    /// Defaults to $CUNET_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Manifest of isolated recordings (and optional feature files).
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint written during and after training.
    #[arg(long)]
    out: PathBuf,
    /// Training log; defaults to the checkpoint path with a .csv extension.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Experiment preset 1-18.
    #[arg(long, conflicts_with_all = ["config", "resume"])]
    preset: Option<u8>,
    /// JSON training config; missing fields take preset 1's values.
    #[arg(long, conflicts_with = "resume")]
    config: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Total iteration count (also extends a resumed run).
    #[arg(long)]
    iterations: Option<u64>,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct TrainOverrides {
    #[arg(long, conflicts_with = "resume")]
    batch_size: Option<usize>,
    #[arg(long, conflicts_with = "resume")]
    lr: Option<f64>,
    #[arg(long, conflicts_with = "resume")]
    base_channels: Option<usize>,
    #[arg(long, conflicts_with = "resume")]
    val_every: Option<u64>,
    #[arg(long, conflicts_with = "resume")]
    val_size: Option<usize>,
    #[arg(long, conflicts_with = "resume")]
    checkpoint_every: Option<u64>,
    /// Defaults to the config's seed, or $CUNET_SEED when set.
    #[arg(long, conflicts_with = "resume")]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConditioningArg {
    /// Use the checkpoint's own conditioning.
    Checkpoint,
    /// Multiply an unconditioned model's masks by the label vector.
    LabelMultiply,
}

#[derive(Debug, Args)]
struct SeparateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    mixture: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Label file for label-conditioned models.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Feature file for visual or motion conditioned models.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Wiener post-filter iterations.
    #[arg(long, default_value_t = 0)]
    wiener: usize,
    #[arg(long, value_enum, default_value_t = ConditioningArg::Checkpoint)]
    conditioning: ConditioningArg,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of estimated stems.
    #[arg(long)]
    estimates: PathBuf,
    /// Directory of reference stems.
    #[arg(long)]
    references: PathBuf,
    /// Presence labels; inferred from non-silent references when absent.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Piece name used in the report rows.
    #[arg(long, default_value = "piece")]
    piece: String,
    /// Distortion filter taps for SDR/SIR/SAR.
    #[arg(long, default_value_t = 512)]
    taps: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Aggregate report; printed to stdout when no output file is given.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MaskArg {
    Irm,
    Ibm,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    mixture: PathBuf,
    /// Directory of reference stems; missing instruments count as silent.
    #[arg(long)]
    stems: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = MaskArg::Irm)]
    mask: MaskArg,
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Separate(a) => commands::separate(a),
        Command::Eval(a) => commands::eval(a),
        Command::Oracle(a) => commands::oracle(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

/// An invalid combination of arguments found after parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}
