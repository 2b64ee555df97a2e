mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stp_relex::deptree::PruneMode;
use stp_relex::eval::BagSetting;

use config::RunConfig;

/// Relation extraction with sub-tree pruning and entity-type pretraining.
#[derive(Parser, Debug)]
#[command(name = "stp-relex", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for generation, initialization, shuffling and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Pruning mode.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<PruneMode>,

    /// Sentences kept per test bag.
    #[arg(long, global = true, value_parser = parse_setting)]
    setting: Option<BagSetting>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic corpus with parses, type map and run config.
    Generate,
    /// Prune the train and test corpora.
    Prune,
    /// Sentence length statistics before and after pruning.
    Stats,
    /// Entity-type pretraining; writes the best shared-encoder checkpoint.
    Pretrain,
    /// Train the relation extractor.
    Train {
        /// Pretraining checkpoint whose shared encoder initializes the model.
        #[arg(long)]
        transfer: Option<PathBuf>,
    },
    /// Held-out evaluation: PR curve CSV and P@N JSON.
    Eval,
    /// Most probable relation per test entity pair, as JSON lines.
    Predict,
}

fn parse_mode(s: &str) -> Result<PruneMode, String> {
    s.parse()
}

fn parse_setting(s: &str) -> Result<BagSetting, String> {
    s.parse().map_err(|e: stp_relex::Error| e.to_string())
}

/// Bad invocation or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return USAGE;
        }
        if let Some(e) = cause.downcast_ref::<stp_relex::Error>() {
            return match e {
                stp_relex::Error::Numerical(_) => NUMERICAL,
                stp_relex::Error::Config(_) => USAGE,
                _ => DATA,
            };
        }
    }
    DATA
}

fn closed_pipe(err: &anyhow::Error) -> bool {
    err.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    config.apply_seed(cli.seed);
    if let Some(m) = cli.mode {
        config.mode = m;
    }
    if let Some(s) = cli.setting {
        config.setting = s;
    }
    if let Some(o) = &cli.out {
        config.paths.out = o.clone();
    }
    config.validate()?;
    match cli.command {
        Command::Generate => commands::generate(&config, &config.paths.out),
        Command::Prune => commands::prune(&config),
        Command::Stats => commands::stats(&config),
        Command::Pretrain => commands::pretrain(&config),
        Command::Train { transfer } => commands::train_relation(&config, transfer.as_deref()),
        Command::Eval => commands::eval(&config),
        Command::Predict => commands::predict(&config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if closed_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
