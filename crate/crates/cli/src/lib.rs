//! The `prioscope` command line. `run` parses arguments, dispatches to a
//! subcommand and maps failures to exit codes: 0 on success, 1 for usage
//! errors, 2 for bad or inconsistent input data.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use prioscope::chain::Chain;
use prioscope::ingest::BadInputPolicy;
use prioscope::priometrics::{Threshold, Window};

mod commands;
mod output;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "prioscope", version, about = "Transaction prioritization forensics for Bitcoin- and Ethereum-style chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Position prediction errors and acceleration flags per transaction.
    Sppe(SppeArgs),
    /// Blocks mined per pool and calendar window.
    Pools(PoolsArgs),
    /// Transactions included without ever being seen pending.
    Private(PrivateArgs),
    /// Bundle economics, heuristic matches, fee gaps and DEX call census.
    Bundles(BundlesArgs),
    /// Oracle update/liquidation patterns, liquidation profits and enablement.
    Defi(DefiArgs),
    /// Inclusion delay and block position of accelerated transactions.
    Delay(DelayArgs),
    /// Generate a synthetic corpus with a ground-truth manifest.
    Synth(SynthArgs),
    /// Compare SPPE flags with externally labeled accelerations.
    Crosscheck(CrosscheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Replace existing output files.
    #[arg(long)]
    pub force: bool,
    /// Skip malformed input lines instead of stopping at the first one.
    #[arg(long)]
    pub skip_bad: bool,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: Option<u16>,
}

impl Common {
    pub fn policy(&self) -> BadInputPolicy {
        if self.skip_bad {
            BadInputPolicy::SkipAndCount
        } else {
            BadInputPolicy::FailFast
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SppeArgs {
    #[arg(long)]
    pub blocks: PathBuf,
    #[arg(long, default_value = "btc")]
    pub chain: Chain,
    /// Pool registry TSV (`marker\tpool`).
    #[arg(long)]
    pub pools: Option<PathBuf>,
    /// SPPE cut-off in percent.
    #[arg(long, default_value = "99")]
    pub threshold: Threshold,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct PoolsArgs {
    #[arg(long)]
    pub blocks: PathBuf,
    #[arg(long, default_value = "btc")]
    pub chain: Chain,
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[arg(long, default_value = "day")]
    pub window: Window,
    /// Pools whose combined share is reported per window, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub subset: Vec<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct PrivateArgs {
    #[arg(long)]
    pub blocks: PathBuf,
    #[arg(long)]
    pub snapshots: PathBuf,
    #[arg(long, default_value = "btc")]
    pub chain: Chain,
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct BundlesArgs {
    #[arg(long)]
    pub blocks: PathBuf,
    /// Required unless only `--economics` output is wanted.
    #[arg(long, required_unless_present = "economics")]
    pub bundles: Option<PathBuf>,
    #[arg(long, default_value = "eth")]
    pub chain: Chain,
    #[arg(long)]
    pub pools: Option<PathBuf>,
    /// Contract registry TSV (`address\tprotocol`).
    #[arg(long)]
    pub contracts: Option<PathBuf>,
    /// Also write per-transaction fee economics (tx_econ.csv).
    #[arg(long)]
    pub economics: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct DefiArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub prices: PathBuf,
    #[arg(long)]
    pub bundles: Option<PathBuf>,
    /// Used to place liquidations that carry no block number.
    #[arg(long)]
    pub blocks: Option<PathBuf>,
    #[arg(long, default_value = "eth")]
    pub chain: Chain,
    /// Liquidation threshold TSV (`protocol\tasset\tthreshold`, asset `*`
    /// for a protocol default).
    #[arg(long)]
    pub liq_thresholds: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct DelayArgs {
    #[arg(long)]
    pub blocks: PathBuf,
    #[arg(long)]
    pub snapshots: PathBuf,
    /// Accelerated txids, one per line; when absent, transactions flagged at
    /// `--threshold` form the accelerated group.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value = "btc")]
    pub chain: Chain,
    #[arg(long, default_value = "99")]
    pub threshold: Threshold,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// JSON spec; without it a small default corpus for `--chain` is built.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "btc")]
    pub chain: Chain,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct CrosscheckArgs {
    #[arg(long)]
    pub blocks: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value = "btc")]
    pub chain: Chain,
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[arg(long, default_value = "99")]
    pub threshold: Threshold,
    #[arg(long, default_value = "day")]
    pub window: Window,
    #[command(flatten)]
    pub common: Common,
}

pub fn init_logging() {
    let env = env_logger::Env::default().filter_or("PRIOSCOPE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parse `argv`, run the subcommand and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}
