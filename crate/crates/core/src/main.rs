use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use rainfuse::app::{cmd_fit, cmd_predict, cmd_simulate, cmd_validate};
use rainfuse::config::{RunConfig, CONFIG_HELP};

/// Gage and radar rainfall fusion.
#[derive(Parser, Debug)]
#[command(name = "rainfuse", version, after_long_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed overriding every seed in the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Model variant, model1 .. model5.
    #[arg(long, global = true, value_name = "modelK")]
    preset: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Draw a synthetic dataset (plus truth files) from the configured scenario.
    Simulate,
    /// Ingest, screen, build covariates and run the sampler; optional hold-out refits.
    Fit,
    /// Rain and zero-probability maps, PGM renderings and DIC from a fitted trace.
    Predict,
    /// Per-repetition and pooled hold-out coverage.
    Validate,
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let path = cli.config.as_ref().context("--config PATH is required")?;
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    cfg.apply_overrides(cli.seed, cli.preset.as_deref());
    match cli.command {
        Cmd::Simulate => {
            let dir = cmd_simulate(&cfg)?;
            println!("dataset written to {}", dir.display());
        }
        Cmd::Fit => {
            let out = cmd_fit(&cfg)?;
            println!("{} draws kept", out.samples.len());
            for w in &out.samples.warnings {
                eprintln!("warning: {w}");
            }
            for (r, c) in out.coverage.iter().enumerate() {
                println!("holdout {r}: coverage {:.4} over {} records", c.fraction, c.records.len());
            }
        }
        Cmd::Predict => {
            for p in cmd_predict(&cfg)? {
                println!("{}", p.display());
            }
        }
        Cmd::Validate => {
            let report = cmd_validate(&cfg)?;
            for (stream, t) in &report.pooled {
                match t.fraction() {
                    Some(f) => println!("{stream}: {f:.4} ({}/{})", t.covered, t.total),
                    None => println!("{stream}: no records"),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = std::env::var("RAINFUSE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("warning: could not cap worker threads: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
