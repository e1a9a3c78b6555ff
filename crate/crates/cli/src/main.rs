//! Batch front end for the basket-embedding and demand pipeline.
//!
//! Each subcommand reads its inputs from files, writes its artifacts into
//! the output directory and prints a one-line summary. Exit status 2 means
//! the configuration was rejected, 1 a failure while running.

mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "prodcomp", version, about = "Product embeddings, complements and substitutes, and demand models")]
struct Cli {
    /// TOML run configuration; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for likelihood evaluation (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory every stage reads from and writes to.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Transaction file, overriding paths.input.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Group transactions into baskets, build the vocabulary and the split.
    Ingest,
    /// Train embeddings on the training baskets.
    Train,
    /// Rank complements and substitutes for every product.
    Relate,
    /// Estimate the configured choice model.
    Fit,
    /// Score the prediction part with a fitted model.
    Predict,
    /// Write a synthetic market and its ground truth.
    Simulate,
    /// Fit and score every configured specification and estimator.
    Eval,
}

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

fn configure(cli: &Cli) -> Result<(RunConfig, config::Resolved), ConfigError> {
    let mut config = config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(input) = &cli.input {
        config.paths.input = Some(input.clone());
    }
    let resolved = config.validate()?;

    let needs_input = matches!(cli.command, Command::Ingest | Command::Fit | Command::Predict | Command::Eval)
        || (matches!(cli.command, Command::Train) && resolved.embedding.price_mode == prodcomp::embeddings::PriceMode::Frozen);
    let input = config.input_path();
    if needs_input && !input.is_file() {
        return Err(ConfigError {
            key: "paths.input".into(),
            message: format!("{} does not exist", input.display()),
        });
    }
    if matches!(cli.command, Command::Fit | Command::Predict | Command::Eval) && config.choice.category.is_none() {
        return Err(ConfigError {
            key: "choice.category".into(),
            message: "required for choice models".into(),
        });
    }
    if let Some(path) = &config.paths.attributes {
        if !path.is_file() {
            return Err(ConfigError {
                key: "paths.attributes".into(),
                message: format!("{} does not exist", path.display()),
            });
        }
    }
    Ok((config, resolved))
}

fn run(cli: &Cli) -> Result<String, Failure> {
    let (config, resolved) = configure(cli).map_err(Failure::Config)?;
    env_logger::Builder::new().filter_level(resolved.log_level).init();
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build_global()
        .map_err(|e| Failure::Runtime(e.into()))?;
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Failure::Runtime(anyhow::anyhow!("creating {}: {e}", config.output_dir.display())))?;
    let run = commands::Run {
        config: &config,
        resolved: &resolved,
    };
    match cli.command {
        Command::Simulate => commands::simulate(&run),
        Command::Ingest => commands::ingest(&run),
        Command::Train => commands::train_embeddings(&run),
        Command::Relate => commands::relate(&run),
        Command::Fit => commands::fit(&run),
        Command::Predict => commands::predict_choices(&run),
        Command::Eval => commands::eval(&run),
    }
    .map_err(Failure::Runtime)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
