//! Command-line front end: configuration plumbing around the library.

mod commands;
mod settings;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use settings::{hash_settings, Settings};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "EVERYWHERE_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Runtime,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Config,
            message: msg.to_string(),
        }
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Runtime,
            message: msg.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Runtime => 3,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "status": "error",
            "kind": match self.kind { ErrorKind::Config => "config", ErrorKind::Runtime => "runtime" },
            "exit_code": self.exit_code(),
            "message": self.message,
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<everywhere::Error> for CliError {
    fn from(e: everywhere::Error) -> Self {
        match e {
            everywhere::Error::Config(_) => CliError::config(e),
            other => CliError::runtime(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "everywhere", version, about = "Targeted transfer attacks with local-block sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat key=value config file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Extra setting, repeatable; overrides the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for image-parallel work (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory (default: $EVERYWHERE_OUT/<command> or runs/<command>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic shapes dataset.
    GenData(GenDataArgs),
    /// Train the model zoo.
    Train(TrainArgs),
    /// Craft adversarial examples on one surrogate.
    Attack(AttackArgs),
    /// Transfer matrix over the zoo.
    Eval(EvalArgs),
    /// Data-free targeted universal perturbations.
    Dtuap(DtuapArgs),
    /// Sweep the partition count or the sample count.
    Ablate(AblateArgs),
    /// Attention coverage between surrogate and victims.
    Coverage(CoverageArgs),
    /// Check saved outputs against the perturbation budget.
    Audit(AuditArgs),
}

/// Attack hyperparameter flags shared by the attacking subcommands.
#[derive(Debug, Args, Default)]
pub struct AttackFlags {
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Partitions per side (M).
    #[arg(long)]
    pub partitions: Option<usize>,
    /// Blocks sampled per iteration (N); 0 is the baseline attack.
    #[arg(long)]
    pub samples: Option<usize>,
    /// CE, Logit, Margin or SupHigh.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out dataset directory for accuracy.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Comma-separated architectures.
    #[arg(long)]
    pub archs: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub zoo: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub surrogate: Option<String>,
    /// Number of leading dataset images to attack (0 = all).
    #[arg(long)]
    pub images: Option<usize>,
    /// random or least_likely.
    #[arg(long)]
    pub mode: Option<String>,
    #[command(flatten)]
    pub attack: AttackFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub zoo: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated losses.
    #[arg(long)]
    pub losses: Option<String>,
    /// Comma-separated target modes.
    #[arg(long)]
    pub modes: Option<String>,
    #[arg(long)]
    pub images: Option<usize>,
    /// csv or json.
    #[arg(long)]
    pub format: Option<String>,
    /// Also write every crafted example with an audit manifest.
    #[arg(long)]
    pub save_examples: bool,
    #[command(flatten)]
    pub attack: AttackFlags,
}

#[derive(Debug, Args)]
pub struct DtuapArgs {
    #[arg(long)]
    pub zoo: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated target classes, or "all".
    #[arg(long)]
    pub targets: Option<String>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub format: Option<String>,
    #[command(flatten)]
    pub attack: AttackFlags,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub zoo: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// partitions or samples.
    #[arg(long)]
    pub param: Option<String>,
    /// Comma-separated values to sweep.
    #[arg(long)]
    pub values: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub format: Option<String>,
    #[command(flatten)]
    pub attack: AttackFlags,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long)]
    pub zoo: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub surrogate: Option<String>,
    #[arg(long)]
    pub images: Option<usize>,
    /// Binarization threshold on max-normalized maps.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub format: Option<String>,
    #[command(flatten)]
    pub attack: AttackFlags,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Manifests, or directories searched recursively for them.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    commands::dispatch(cli)
}
