use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use recbias::commands;
use recbias::config::RunConfig;

/// Venue recommender training, evaluation and bias audit.
///
/// Exit codes: 0 success, 1 usage or configuration error, 2 I/O or data
/// error, 3 contract violation.
#[derive(Debug, Parser)]
#[command(name = "recbias", version)]
struct Cli {
    /// TOML config file; every key can also be set with --set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// City to process; repeatable (overrides the config).
    #[arg(long = "city", global = true)]
    cities: Vec<String>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Config override as KEY=VALUE, value in TOML syntax; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter, mask and split the corpus; write dataset statistics.
    Ingest,
    /// Train one recommender per city.
    Train,
    /// Grid search over dropout and learning rate per city.
    Search,
    /// Score held-out reviews and write the ranking-metric table.
    Eval,
    /// Run the template-based bias audit.
    Audit,
    /// Summarize existing outputs as markdown.
    Report,
}

fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        config.set(o)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if !cli.cities.is_empty() {
        config.cities = cli.cities.clone();
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = resolve_config(&cli)?;
    let manifest = match cli.command {
        Command::Ingest => commands::ingest(&config),
        Command::Train => commands::train_cmd(&config),
        Command::Search => commands::search_cmd(&config),
        Command::Eval => commands::eval_cmd(&config),
        Command::Audit => commands::audit_cmd(&config),
        Command::Report => commands::report_cmd(&config),
    }?;
    log::info!("wrote {}", manifest.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<recbias::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
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
