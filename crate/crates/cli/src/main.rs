mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Multi-range relational graphs, GRMP layers, FLOPs accounting and KG
/// training.
#[derive(Debug, Parser)]
#[command(name = "eurnet", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Random seed (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 makes every run bit-reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Compute in 64-bit instead of 32-bit.
    #[arg(long, global = true)]
    pub f64: bool,
    /// TOML file with defaults for any setting; flags take priority.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (or file, for `bench-flops` and `verify`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Domain {
    Image,
    Protein,
    Kg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    All,
    Gradcheck,
    FlopsExact,
    E3,
    Oracles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    /// Expect 8 instead of 7 per-relation FLOPs in the GRMP formula.
    GrmpConstant,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a multi-relational graph and write `edges.tsv` and
    /// `registry.json`.
    BuildGraph {
        #[arg(value_enum)]
        domain: Domain,
        /// Patch-grid binary, residue text file, or a KG directory
        /// (train/valid/test.tsv) or single TSV file.
        #[arg(long)]
        input: PathBuf,
        /// Medium-range neighbors per patch (image only).
        #[arg(long)]
        medium_k: Option<usize>,
    },
    /// FLOPs of RGConv and GRMP models over K = k-min..k-max relations, as CSV.
    BenchFlops {
        #[arg(long)]
        k_min: Option<u64>,
        #[arg(long)]
        k_max: Option<u64>,
        #[arg(long)]
        resolution: Option<u64>,
    },
    /// Run self-check suites; exits 1 if any check fails.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        /// Number of rigid motions in the E(3) suite.
        #[arg(long)]
        transforms: Option<usize>,
        /// Deliberately break one expectation, to see the suite fail.
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
    },
    /// Train the KG link predictor; writes the metric history, test metrics
    /// and parameters.
    TrainKg {
        /// Directory with train.tsv, valid.tsv and test.tsv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a trained KG model, or compute Fmax from prediction files.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Generate the seeded kinship KG as train/valid/test.tsv.
    GenToyKg {
        #[arg(long)]
        people: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Filtered ranking metrics of a model written by `train-kg`.
    Kg {
        #[arg(long)]
        data: PathBuf,
        /// Output directory of the training run.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Protein-centric Fmax from `protein_id,task_id,score` files.
    Fmax {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
}

/// Exit codes: 0 success, 1 verification failure, 2 usage or
/// configuration error, 3 data error.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<eurnet::Error>() {
        Some(e) if e.is_data_error() => 3,
        Some(eurnet::Error::Config(_)) => 2,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
