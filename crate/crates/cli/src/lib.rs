//! `dshgcn` command line: dataset synthesis and conversion, training,
//! evaluation, gradient checks and sweeps.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation failure, 3 failed
//! gradient check. Every failure prints one line `error[<kind>]: <message>`
//! to stderr.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dshgcn::Ablation;

mod commands;

/// Relative `--out` paths are resolved against this directory when set.
pub const OUTPUT_ROOT_ENV: &str = "DSHGCN_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "dshgcn", version, about = "Dual-stream hypergraph engagement classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic planted-contagion dataset
    Synth(SynthArgs),
    /// Convert a CSV of per-student feature vectors into a dataset file
    Convert(ConvertArgs),
    /// Train a model and write config, checkpoint, epoch log and metrics
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences
    Gradcheck(GradcheckArgs),
    /// Layer-count grid or training-data-scale sweep
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    pub students: usize,
    #[arg(long, default_value_t = 100)]
    pub snapshots: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Contagion strength; a comma list draws one per snapshot
    #[arg(long, default_value = "0.7", value_delimiter = ',')]
    pub rho: Vec<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Per-student style offset shared by all feature types
    #[arg(long, default_value_t = 0.5)]
    pub style: f64,
    #[arg(long, default_value_t = 512)]
    pub d_e: usize,
    #[arg(long, default_value_t = 49)]
    pub d_a: usize,
    #[arg(long, default_value_t = 34)]
    pub d_u: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// Header: snapshot_id,student,label,e0..,a0..,u0..
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, value_delimiter = ',')]
    pub label_names: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Binary,
    Ternary,
}

impl Task {
    pub fn classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Ternary => 3,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Task::Binary)]
    pub task: Task,
    /// JSON training config; omitted fields take their defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's ablation
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
    /// Overrides the config's seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's epoch count
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics file; defaults to eval_metrics.json beside the checkpoint
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub students: usize,
    #[arg(long, default_value_t = 8)]
    pub dh: usize,
    /// Hypergraph and graph layer count
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long, value_parser = parse_ablation, default_value = "none")]
    pub ablation: Ablation,
    /// Write the report as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    Layers,
    Datascale,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub mode: SweepMode,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Largest L and K in the layer grid
    #[arg(long, default_value_t = 6)]
    pub max_layers: usize,
    #[arg(long, default_value = "0.2,0.4,0.6,0.8", value_delimiter = ',')]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: dshgcn::Error| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(dshgcn::Error),
    Io(PathBuf, std::io::Error),
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) | CliError::Io(..) => 2,
            CliError::CheckFailed(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        use dshgcn::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(..) => "io",
            CliError::CheckFailed(_) => "gradcheck",
            CliError::Validation(e) => match e {
                E::Io { .. } => "io",
                E::Dataset { .. } | E::Json(_) | E::Csv(_) => "dataset",
                E::Checkpoint(_) => "checkpoint",
                E::InvalidConfig(_) | E::AbsentClass(_) | E::EmptyTrainingSplit => "config",
                _ => "validation",
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            CliError::Usage(m) | CliError::CheckFailed(m) => m.clone(),
            CliError::Validation(e) => e.to_string(),
            CliError::Io(p, e) => format!("{}: {e}", p.display()),
        };
        // One line, whatever the source message looks like.
        write!(f, "{}", text.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

impl From<dshgcn::Error> for CliError {
    fn from(e: dshgcn::Error) -> Self {
        CliError::Validation(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Resolves a relative output path against `root` when given.
pub fn resolve_out(path: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    }
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let root = output_root();
    let out = |p: &Path| resolve_out(p, root.as_deref());
    match cli.command {
        Command::Synth(a) => commands::synth(&a, &out(&a.out)),
        Command::Convert(a) => commands::convert(&a, &out(&a.out)),
        Command::Train(a) => commands::train(&a, &out(&a.out)),
        Command::Eval(a) => {
            let target = a.out.as_deref().map(out);
            commands::eval(&a, target)
        }
        Command::Gradcheck(a) => {
            let target = a.out.as_deref().map(out);
            commands::gradcheck(&a, target)
        }
        Command::Sweep(a) => commands::sweep(&a, &out(&a.out)),
    }
}

/// Parses `args`, runs the command, reports failures, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("error[{}]: {err}", err.kind());
            return err.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.kind());
            err.exit_code()
        }
    }
}
