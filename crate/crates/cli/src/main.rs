//! `seizure`: synthesize, train, tune, run and evaluate the online detector.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use seizure_core::online::{LowPolicy, UpdateMode};
use seizure_core::ArithMode;

/// Error the user can fix: bad flags, missing inputs, schema violations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "seizure", version, about = "Streaming seizure detection with unsupervised online learning")]
struct Cli {
    /// TOML config file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory relative input paths are resolved against
    #[arg(long, global = true, env = "SEIZURE_DATA_DIR")]
    data_dir: Option<PathBuf>,

    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic drifting EEG record with annotations
    Synth(SynthArgs),
    /// Split a record, fit the offline classifier and tune WS/CT
    Train(TrainArgs),
    /// Grid-search WS/CT for an existing model on an annotated record
    Tune(TuneArgs),
    /// Stream a record through a model and write the prediction trace
    Run(RunArgs),
    /// Score prediction traces against annotations
    Eval(EvalArgs),
    /// Check filter-bank passband, stopband and fixed-point stability
    VerifyFilters(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Float,
    Fixed,
}

impl From<Mode> for ArithMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Float => ArithMode::Float,
            Mode::Fixed => ArithMode::Fixed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum UpdateArg {
    Single,
    Window,
}

impl From<UpdateArg> for UpdateMode {
    fn from(u: UpdateArg) -> Self {
        match u {
            UpdateArg::Single => UpdateMode::Single,
            UpdateArg::Window => UpdateMode::Window,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LowArg {
    Shift,
    Reset,
}

impl From<LowArg> for LowPolicy {
    fn from(l: LowArg) -> Self {
        match l {
            LowArg::Shift => LowPolicy::Shift,
            LowArg::Reset => LowPolicy::Reset,
        }
    }
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// RNG seed; same seed, same bytes
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record length in seconds
    #[arg(long)]
    pub duration: Option<f64>,
    /// Sampling rate in Hz
    #[arg(long)]
    pub fs: Option<f64>,
    /// Number of channels
    #[arg(long)]
    pub channels: Option<usize>,
    /// Mean event rate
    #[arg(long)]
    pub seizures_per_hour: Option<f64>,
    /// Keep burst amplitude and frequency constant
    #[arg(long)]
    pub no_drift: bool,
}

#[derive(Args)]
pub struct RecordArgs {
    /// Record as CSV (`t,<channels>`) or EDF (`.edf`)
    #[arg(long)]
    pub input: PathBuf,
    /// Seizure intervals as CSV `onset_s,offset_s`
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Channels to keep, comma separated
    #[arg(long, value_delimiter = ',')]
    pub pick: Vec<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub record: RecordArgs,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Arithmetic backend of the saved model
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// L1 penalty for feature selection
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Keep --ws/--ct instead of grid tuning on the validation segment
    #[arg(long)]
    pub no_tune: bool,
    /// Window size in samples
    #[arg(long)]
    pub ws: Option<usize>,
    /// Confidence threshold in (0.5, 1)
    #[arg(long)]
    pub ct: Option<f64>,
    /// Seed recorded in the model provenance
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TuneArgs {
    /// Model to tune
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub record: RecordArgs,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// WS grid, comma separated
    #[arg(long, value_delimiter = ',')]
    pub ws: Vec<usize>,
    /// CT grid, comma separated
    #[arg(long, value_delimiter = ',')]
    pub ct: Vec<f64>,
}

#[derive(Args)]
pub struct OnlineArgs {
    /// Self-training on or off (off = static baseline)
    #[arg(long, value_enum)]
    pub online: Option<OnOff>,
    /// SGD steps per retrain: the triggering sample or the whole run
    #[arg(long, value_enum)]
    pub update_mode: Option<UpdateArg>,
    /// What a LOW-confidence sample does to the shift registers
    #[arg(long, value_enum)]
    pub low_policy: Option<LowArg>,
    /// Score the sample after a retrain instead of skipping it
    #[arg(long)]
    pub no_hw_skip: bool,
}

#[derive(Args)]
pub struct RunArgs {
    /// Model file from `train` or `tune`
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub record: RecordArgs,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Backend; defaults to the model's
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[command(flatten)]
    pub online: OnlineArgs,
    /// Use the logistic lookup table in float mode too
    #[arg(long)]
    pub lut: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Prediction trace, optionally named as `name=path`; repeat to compare
    #[arg(long, required = true)]
    pub predictions: Vec<String>,
    /// Seizure intervals as CSV `onset_s,offset_s`
    #[arg(long)]
    pub annotations: PathBuf,
    /// Sampling rate of the traces
    #[arg(long)]
    pub fs: f64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Seconds after an event's offset a detection still counts
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Positive runs closer than this many seconds form one alarm
    #[arg(long)]
    pub merge: Option<f64>,
    /// Leading seconds excluded from specificity and false alarms
    #[arg(long)]
    pub warmup: Option<f64>,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Sampling rates of the reference banks to check
    #[arg(long, value_delimiter = ',')]
    pub fs: Vec<f64>,
    /// Check the bank stored in this model instead
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also write the report to this directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn is_validation(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<UsageError>().is_some() || c.downcast_ref::<seizure_core::Error>().is_some_and(|e| e.is_validation()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();

    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
