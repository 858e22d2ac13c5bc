use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use fedhet::runner::{run_command, Command, ExperimentConfig, RunOptions};
use fedhet::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Verb {
    Generate,
    Embed,
    Partition,
    Train,
    Analyze,
    Report,
    All,
}

/// Federated learning experiments under embedding-based data heterogeneity.
#[derive(Parser, Debug)]
#[command(name = "fedhet", version)]
struct Cli {
    #[arg(value_enum)]
    verb: Verb,
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Leave timestamps out of the manifest.
    #[arg(long)]
    reproducible: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut cfg = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("fedhet: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let cmd = match cli.verb {
        Verb::Generate => Command::Generate,
        Verb::Embed => Command::Embed,
        Verb::Partition => Command::Partition,
        Verb::Train => Command::Train,
        Verb::Analyze => Command::Analyze,
        Verb::Report => Command::Report,
        Verb::All => Command::All,
    };
    let opts = RunOptions {
        out,
        jobs: cli.jobs,
        reproducible: cli.reproducible,
    };
    match run_command(cmd, &cfg, &opts) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in &failures {
                eprintln!("fedhet: {}: {}", f.cell, f.error);
            }
            eprintln!("fedhet: {} failure(s), see manifest.json", failures.len());
            ExitCode::from(2)
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("fedhet: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("fedhet: {e}");
            ExitCode::from(2)
        }
    }
}
