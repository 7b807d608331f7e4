use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use clear_harness::oracles::{run_oracle, ORACLES};
use clear_harness::summary::summarize_tree;
use clear_harness::{run_experiment, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "clear", about = "Continual-learning experiments with CLEAR", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config for each of its seeds.
    Run {
        config: PathBuf,
        /// Replaces the config's seed list; repeatable.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Output directory (default: <output.dir>/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of seeds trained concurrently.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Single-threaded synchronous training; output is bit-reproducible.
        #[arg(long)]
        deterministic: bool,
        /// Override a config key, e.g. `--set runtime.new_ratio=1.0`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Check a config without running it.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Rebuild summary.csv and final_table.csv from metrics files.
    Summarize { dir: PathBuf },
    /// Run a named brute-force check.
    Oracle {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(ORACLES))]
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    for o in overrides {
        cfg.set(o)?;
    }
    Ok(cfg)
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            config,
            seeds,
            out,
            threads,
            deterministic,
            overrides,
        } => {
            let mut cfg = load(&config, &overrides)?;
            if !seeds.is_empty() {
                cfg.run.seeds = seeds;
            }
            cfg.run.deterministic |= deterministic;
            let dir = out.unwrap_or_else(|| cfg.output.dir.join(&cfg.name));
            let opts = RunOptions {
                deterministic: cfg.run.deterministic,
                parallel_seeds: threads,
            };
            let output = run_experiment(&cfg, &dir, opts)?;
            println!("wrote {}", output.dir.display());
            for f in &output.summary.finals {
                println!("{:<4} final cumulative {:+.4} (std {:.4})", f.task, f.mean, f.std);
            }
        }
        Command::Validate { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            cfg.validate()?;
            println!(
                "{}: ok, {} training frames per seed",
                config.display(),
                cfg.total_frames()?
            );
        }
        Command::Summarize { dir } => {
            for (name, summary) in summarize_tree(&dir)? {
                for f in &summary.finals {
                    println!("{name}: {:<4} {:+.4} (std {:.4})", f.task, f.mean, f.std);
                }
            }
        }
        Command::Oracle { name, seed } => {
            let report = run_oracle(&name, seed)?;
            let verdict = if report.passed { "PASS" } else { "FAIL" };
            println!(
                "{verdict} {}: {} [{:.2}s]",
                report.name,
                report.detail,
                report.elapsed.as_secs_f64()
            );
            if !report.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
