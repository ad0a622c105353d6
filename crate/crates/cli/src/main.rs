//! `rvsd`: shadow prior, dataset tooling, training and evaluation from the
//! command line.
//!
//! Exit codes: 0 success, 1 validation or contract failure, 2 I/O failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rvsd::tsm::MemoryMode;

#[derive(Parser, Debug)]
#[command(name = "rvsd", version, about = "Referring video shadow detection toolkit")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed, overrides the model and generator seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Shadow prior masks and weighted overlays for a directory of frames.
    Msa {
        /// Directory of PNG / PPM frames.
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate the synthetic dataset into `--out`.
    Synth,
    /// Check a manifest and the files it references.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Dataset statistics.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train on the manifest's train split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Overrides `train.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides `train.optimizer.lr`.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, required_unless_present = "ground_truth")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Shadow prior weighting at inference; defaults to the checkpoint's.
        #[arg(long, value_enum)]
        msa: Option<Toggle>,
        /// Memory mode at inference; defaults to the checkpoint's.
        #[arg(long, value_parser = parse_memory)]
        memory: Option<MemoryMode>,
        /// Score the ground truth against itself instead of a model.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Finite-difference check of every differentiable op and the loss.
    Gradcheck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

fn parse_memory(s: &str) -> Result<MemoryMode, String> {
    s.parse::<MemoryMode>().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
