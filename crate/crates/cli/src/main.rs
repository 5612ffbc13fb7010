//! `hssrand` command-line driver.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hssrand::{HssError, Strategy};

use crate::output::Format;

#[derive(Parser, Debug)]
#[command(name = "hssrand", version, about = "Adaptive randomized HSS compression")]
pub struct Cli {
    /// Output encoding.
    #[arg(long, global = true, value_enum, default_value = "json", env = "HSSRAND_OUT")]
    pub out: Format,
    /// Worker threads; more than one enables subtree parallelism.
    #[arg(long, global = true, env = "HSSRAND_THREADS")]
    pub threads: Option<usize>,
    /// Include wall-clock times in reports (makes output non-reproducible).
    #[arg(long, global = true, env = "HSSRAND_TIMINGS")]
    pub timings: bool,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compress one matrix and report rank, memory, error and flops.
    Compress(CompressArgs),
    /// Compare adaptation modes on the same matrix.
    AdaptCompare(AdaptCompareArgs),
    /// Sweep relative and absolute tolerances.
    StoppingGrid(StoppingGridArgs),
    /// Tabulate tail bounds against Monte Carlo frequencies.
    Bounds(BoundsArgs),
    /// Tabulate communication and flop models.
    Cost(CostArgs),
}

/// `param`, `toeplitz` or `dense:<file>`.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    Param,
    Toeplitz,
    Dense(PathBuf),
}

impl FromStr for KernelSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "param" => Ok(KernelSpec::Param),
            "toeplitz" => Ok(KernelSpec::Toeplitz),
            _ => match s.strip_prefix("dense:") {
                Some(p) if !p.is_empty() => Ok(KernelSpec::Dense(PathBuf::from(p))),
                _ => Err(format!("unknown kernel '{s}' (expected param, toeplitz or dense:<file>)")),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Doubling,
    Incrementing,
    KnownRank,
    HardRestart,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Doubling => Strategy::Doubling,
            StrategyArg::Incrementing => Strategy::Incrementing,
            StrategyArg::KnownRank => Strategy::KnownRank,
            StrategyArg::HardRestart => Strategy::HardRestart,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct KernelArgs {
    #[arg(long, default_value = "param", env = "HSSRAND_KERNEL")]
    pub kernel: KernelSpec,
    /// Matrix order (ignored for dense files).
    #[arg(long, default_value_t = 1024, env = "HSSRAND_N")]
    pub n: usize,
    /// Rank of the low-rank term of the param kernel.
    #[arg(long, default_value_t = 100, env = "HSSRAND_RANK")]
    pub rank: usize,
    #[arg(long, default_value_t = 1.0, env = "HSSRAND_ALPHA")]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0, env = "HSSRAND_BETA")]
    pub beta: f64,
    /// Exponentially decaying spectrum for the param kernel.
    #[arg(long, env = "HSSRAND_DECAY")]
    pub decay: bool,
    /// Seed of the param kernel's random factors.
    #[arg(long, default_value_t = 42, env = "HSSRAND_MATRIX_SEED")]
    pub matrix_seed: u64,
    #[arg(long, default_value_t = 128, env = "HSSRAND_LEAF")]
    pub leaf: usize,
}

#[derive(Args, Debug, Clone)]
pub struct SamplingArgs {
    #[arg(long, default_value_t = 128, env = "HSSRAND_D0")]
    pub d0: usize,
    #[arg(long, default_value_t = 64, env = "HSSRAND_DD")]
    pub dd: usize,
    /// Oversampling.
    #[arg(long, default_value_t = 10, env = "HSSRAND_P")]
    pub p: usize,
    /// Maximum sample columns (default min(N, 5000)).
    #[arg(long, env = "HSSRAND_DMAX")]
    pub dmax: Option<usize>,
    /// Seed of the random sample stream.
    #[arg(long, default_value_t = 1, env = "HSSRAND_SEED")]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    /// Skip the dense verification.
    #[arg(long, env = "HSSRAND_NO_VERIFY", conflicts_with = "force_verify")]
    pub no_verify: bool,
    /// Verify even above N = 4096.
    #[arg(long, env = "HSSRAND_FORCE_VERIFY")]
    pub force_verify: bool,
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub verify: VerifyArgs,
    #[arg(long, default_value_t = 1e-6, env = "HSSRAND_RTOL")]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-8, env = "HSSRAND_ATOL")]
    pub atol: f64,
    #[arg(long, value_enum, default_value = "incrementing", env = "HSSRAND_STRATEGY")]
    pub strategy: StrategyArg,
    /// Use the absolute probabilistic 2-norm criterion with this alpha.
    #[arg(long, env = "HSSRAND_HMT_ALPHA")]
    pub hmt_alpha: Option<f64>,
    /// Write the cluster tree as JSON to this file.
    #[arg(long, env = "HSSRAND_DUMP_TREE")]
    pub dump_tree: Option<PathBuf>,
    /// Write the HSS structure as JSON to this file.
    #[arg(long, env = "HSSRAND_DUMP_HSS")]
    pub dump_hss: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AdaptCompareArgs {
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub verify: VerifyArgs,
    #[arg(long, default_value_t = 1e-6, env = "HSSRAND_RTOL")]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-8, env = "HSSRAND_ATOL")]
    pub atol: f64,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "known-rank,incrementing,hard-restart",
        env = "HSSRAND_MODES"
    )]
    pub modes: Vec<StrategyArg>,
    /// Sample count for known-rank (default: largest adaptive rank + p).
    #[arg(long, env = "HSSRAND_KNOWN_D")]
    pub known_d: Option<usize>,
}

#[derive(Args, Debug)]
pub struct StoppingGridArgs {
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub verify: VerifyArgs,
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-6,1e-10", env = "HSSRAND_RTOLS")]
    pub rtols: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-6,1e-10", env = "HSSRAND_ATOLS")]
    pub atols: Vec<f64>,
    /// Add one row per absolute tolerance using the HMT criterion.
    #[arg(long, env = "HSSRAND_HMT")]
    pub hmt: bool,
    #[arg(long, default_value_t = 10.0, env = "HSSRAND_HMT_ALPHA")]
    pub hmt_alpha: f64,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    /// Singular values, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "spectrum_file", env = "HSSRAND_SIGMAS")]
    pub sigmas: Vec<f64>,
    /// File of singular values separated by whitespace or commas.
    #[arg(long, conflicts_with = "sigmas", env = "HSSRAND_SPECTRUM_FILE")]
    pub spectrum_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "10", env = "HSSRAND_D")]
    pub d: Vec<usize>,
    /// Values above 1 use the upper tail, values in [0, 1) the lower tail.
    #[arg(long, value_delimiter = ',', default_value = "0.5,2", env = "HSSRAND_TAU")]
    pub tau: Vec<f64>,
    #[arg(long, default_value_t = 10_000, env = "HSSRAND_TRIALS")]
    pub trials: usize,
    #[arg(long, default_value_t = 1, env = "HSSRAND_SEED")]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct CostArgs {
    #[arg(long, default_value_t = 100_000, env = "HSSRAND_M")]
    pub m: usize,
    #[arg(long, default_value_t = 512, env = "HSSRAND_R")]
    pub r: usize,
    #[arg(long, default_value_t = 8, env = "HSSRAND_D0")]
    pub d0: usize,
    #[arg(long, default_value_t = 64, env = "HSSRAND_DD")]
    pub dd: usize,
    /// Oversampling used by the doubling flop model.
    #[arg(long, default_value_t = 10, env = "HSSRAND_P")]
    pub p: usize,
    /// Process counts.
    #[arg(long = "P", value_delimiter = ',', default_value = "4,16,64", env = "HSSRAND_PROCS")]
    pub procs: Vec<usize>,
    /// Block size for the legacy ID pricing.
    #[arg(long, default_value_t = 64, env = "HSSRAND_NB")]
    pub nb: usize,
    /// Levels of process halving (default log2 P).
    #[arg(long, env = "HSSRAND_LEVELS")]
    pub levels: Option<usize>,
    /// Add the older pricing columns.
    #[arg(long, env = "HSSRAND_LEGACY")]
    pub legacy: bool,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    MaxRank(String),
    /// Message and the report that failed the check.
    Verify(String, String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<HssError>() {
            Some(HssError::MaxRankReached { .. }) => Failure::MaxRank(format!("{e:#}")),
            _ => Failure::Other(e),
        }
    }
}

impl From<HssError> for Failure {
    fn from(e: HssError) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(Failure::MaxRank(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Verify(msg, text)) => {
            print!("{text}");
            eprintln!("verification failed: {msg}");
            ExitCode::from(4)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
