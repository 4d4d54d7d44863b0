use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod eval;
mod gen_data;
mod seed;
mod train;

#[derive(Parser, Debug)]
#[command(name = "spikegrad", version, about = "Train and evaluate spiking neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a config file (or a previous run's manifest).
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the built-in oracle checks.
    Verify(VerifyArgs),
    /// Write a synthetic dataset as IDX files plus a matching config.
    GenData(GenDataArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Config file with key = value lines.
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Re-run exactly the run recorded in this manifest.json.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Override a config value, e.g. `--set optim.lr=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory for manifest, metrics, checkpoints and summary.
    #[arg(long, default_value = "spikegrad-run")]
    pub out: PathBuf,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    #[arg(long)]
    pub cifar10: Option<PathBuf>,
    #[arg(long)]
    pub cifar100: Option<PathBuf>,
    /// Synthetic dataset kind (blobs, spirals, glyphs).
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Samples to generate with --synthetic.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Timesteps; defaults to the value stored in the checkpoint.
    #[arg(long)]
    pub timesteps: Option<usize>,
    /// Seed for synthetic data generation.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Print a JSON report instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Only run checks whose name contains this string.
    #[arg(long)]
    only: Option<String>,
    #[arg(long, hide = true)]
    perturb_surrogate_width: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// blobs, spirals or glyphs.
    #[arg(long, default_value = "glyphs")]
    pub kind: String,
    #[arg(long, default_value_t = 10_000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 2_000)]
    pub n_test: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// File name prefix; defaults to the kind.
    #[arg(long)]
    pub prefix: Option<String>,
}

/// A failed command: exit code 1 for run failures, 2 for usage and
/// configuration errors.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn run(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<spikegrad::Error> for Failure {
    fn from(e: spikegrad::Error) -> Self {
        use spikegrad::Error as E;
        match e {
            E::Config(_) | E::Io { .. } => Failure::usage(e.to_string()),
            _ => Failure::run(e.to_string()),
        }
    }
}

fn verify(args: VerifyArgs) -> Result<(), Failure> {
    let seed = seed::resolve(args.seed, None, None)?;
    println!("seed {} ({})", seed.value, seed.source);
    let opts = spikegrad::verify::VerifyOptions {
        seed: seed.value,
        surrogate_width: args.perturb_surrogate_width,
    };
    let only = args.only.unwrap_or_default();
    let checks = spikegrad::verify::run_selected(&opts, |name| name.contains(&only));
    if checks.is_empty() {
        return Err(Failure::usage(format!("no check matches '{only}'")));
    }
    print!("{}", spikegrad::verify::format_table(&checks));
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::run(format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Verify(a) => verify(a),
        Command::GenData(a) => gen_data::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
