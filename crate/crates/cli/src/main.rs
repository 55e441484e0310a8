//! `gim`: simulate, ingest, train, rank, ticker, evaluate and check-grad.

mod commands;
mod config;
mod run_dir;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Bad flags, bad config or a missing input. Exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A failed numerical check. Exit code 3.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

#[derive(Parser, Debug)]
#[command(name = "gim", version, about = "Next-goal Q-learning and the Goal Impact Metric")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = all cores, 1 = bit-reproducible).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory; defaults to a fresh run directory under `paths.runs`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a season: events.csv plus per-player stats.csv.
    Simulate(SimulateArgs),
    /// Parse an event CSV into sequences.seq.
    Ingest(IngestArgs),
    /// Train a Q-network on sequences.seq.
    Train(TrainArgs),
    /// Rank players by GIM.
    Rank(RankArgs),
    /// Q values over one game.
    Ticker(TickerArgs),
    /// Correlation, t-test and round-by-round reports for GIM, GIM-T1 and SI.
    Evaluate(EvaluateArgs),
    /// Compare analytic and finite-difference gradients.
    CheckGrad(CheckGradArgs),
    /// Print the effective configuration.
    Config(ConfigArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Number of games [simulate.games].
    #[arg(long)]
    pub games: Option<usize>,
    /// Season seed [simulate.seed].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulator spec TOML [paths.sim_spec].
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EventsInput {
    /// Event CSV.
    #[arg(long)]
    pub events: PathBuf,
    /// Skip malformed rows with a warning instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: EventsInput,
    /// Action vocabulary file [paths.vocab].
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// sequences.seq from `ingest`.
    #[arg(long)]
    pub data: PathBuf,
    /// [train.max_steps]
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// [train.learning_rate]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// [train.final_learning_rate]
    #[arg(long)]
    pub final_learning_rate: Option<f64>,
    /// [train.batch_size]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [train.seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [train.eval_every]
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// [train.optimizer]: sgd or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// [network.max_trace]; 1 gives the GIM-T1 lesion.
    #[arg(long)]
    pub max_trace: Option<usize>,
    /// [network.lstm_hidden]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// [network.init_seed]
    #[arg(long)]
    pub init_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: EventsInput,
    /// Per-player stats CSV for goals, assists, points and games.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TickerArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: EventsInput,
    #[arg(long)]
    pub game_id: u64,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: EventsInput,
    /// Per-player stats CSV.
    #[arg(long)]
    pub stats: PathBuf,
    /// Checkpoint trained with max_trace = 1.
    #[arg(long)]
    pub t1_checkpoint: Option<PathBuf>,
    /// Also score with the exact simulator Q (events must come from the spec).
    #[arg(long)]
    pub oracle: bool,
    /// [evaluate.min_games]
    #[arg(long)]
    pub min_games: Option<u32>,
}

#[derive(Args, Debug)]
pub struct CheckGradArgs {
    /// [check_grad.lstm_hidden]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// [check_grad.trace_lengths], comma separated.
    #[arg(long, value_delimiter = ',')]
    pub trace_lengths: Option<Vec<usize>>,
    /// [check_grad.seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [check_grad.tolerance]
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Print the built-in defaults instead.
    #[arg(long)]
    pub dump: bool,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<NumericalFailure>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<gim_core::Error>() {
            return if e.is_numerical() { 3 } else { 2 };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| UsageError(format!("--threads: {e}")))?;
    commands::dispatch(cli.command, cfg, cli.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
