//! The full generate-embed-partition-train-analyze-report pipeline on a
//! small config, written to a directory of your choice.
//!
//! cargo run --release --example pipeline -- [config.toml] [out-dir]

use std::path::PathBuf;

use fedhet::runner::{run_command, Command, ExperimentConfig, RunOptions};

fn main() -> fedhet::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/tiny.toml")));
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out/pipeline"));
    let cfg = ExperimentConfig::load(&config)?;
    let failures = run_command(
        Command::All,
        &cfg,
        &RunOptions {
            out: out.clone(),
            jobs: None,
            reproducible: true,
        },
    )?;
    for f in &failures {
        eprintln!("{}: {}", f.cell, f.error);
    }
    for mode in &cfg.partition.modes {
        let path = out.join(format!("analysis/cross_seed_{}.csv", mode.as_str()));
        println!(
            "{}:\n{}",
            path.display(),
            std::fs::read_to_string(&path).unwrap_or_default()
        );
    }
    println!(
        "{}",
        std::fs::read_to_string(out.join("analysis/heatmap.csv")).unwrap_or_default()
    );
    Ok(())
}
