//! `hem` command-line interface.
//!
//! Subcommands: `train` runs an experiment from a JSON config; `eval` scores
//! a checkpoint; `lab` writes the estimator-analysis table; `check` runs the
//! gradient and oracle self-tests.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration.

use clap::{Parser, Subcommand};
use hem_core::config::ExperimentConfig;
use hem_core::error::Error;
use hem_core::runner;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hem", version, about = "Goal-conditioned RL lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment to its env-step budget.
    Train {
        /// Path to the experiment config (JSON).
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint greedily and print the success rate.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the estimator lab over a list of k values and write a CSV table.
    Lab {
        /// Comma-separated k values; "a,b,...,z" continues geometrically
        /// with ratio b/a up to z (e.g. "2,4,...,256").
        #[arg(long)]
        ks: String,
        /// Output CSV path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run gradient and oracle self-tests; exits nonzero on any failure.
    Check,
}

fn parse_ks(text: &str) -> Result<Vec<usize>, Error> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = |msg: &str| Error::Config(format!("bad --ks '{text}': {msg}"));
    let mut ks: Vec<usize> = Vec::new();
    for (i, part) in parts.iter().enumerate() {
        if *part == "..." {
            if i < 2 || i + 1 != parts.len() - 1 {
                return Err(bad("'...' must follow two values and precede the last"));
            }
            let a = ks[ks.len() - 2];
            let b = ks[ks.len() - 1];
            if b <= a || !b.is_multiple_of(a) {
                return Err(bad("geometric continuation needs an integer ratio > 1"));
            }
            let ratio = b / a;
            let stop: usize = parts[i + 1]
                .parse()
                .map_err(|_| bad("values must be integers"))?;
            let mut next = b * ratio;
            while next < stop {
                ks.push(next);
                next *= ratio;
            }
            if next != stop {
                return Err(bad("final value is not on the geometric sequence"));
            }
            ks.push(stop);
            return Ok(ks);
        }
        ks.push(part.parse().map_err(|_| bad("values must be integers"))?);
    }
    if ks.is_empty() {
        return Err(bad("empty list"));
    }
    Ok(ks)
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config, seed } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Ok(threads) = std::env::var("HEM_THREADS") {
                cfg.workers = threads
                    .parse()
                    .map_err(|_| Error::Config(format!("bad HEM_THREADS '{threads}'")))?;
                cfg.validate()?;
            }
            let metrics = runner::run_experiment(&cfg)?;
            println!("{}", metrics.display());
            Ok(())
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            if episodes == 0 {
                return Err(Error::Config("--episodes must be positive".into()));
            }
            let success = runner::eval_checkpoint(&checkpoint, episodes, seed)?;
            println!("success_rate {success}");
            Ok(())
        }
        Command::Lab { ks, out } => {
            let ks = parse_ks(&ks)?;
            let table = runner::lab_table(&ks)?;
            match out {
                Some(path) => std::fs::write(&path, table)?,
                None => print!("{table}"),
            }
            Ok(())
        }
        Command::Check => {
            let results = runner::self_check();
            let mut all_ok = true;
            for (name, ok) in &results {
                println!("check {}: {}", name, if *ok { "PASS" } else { "FAIL" });
                all_ok &= ok;
            }
            if all_ok {
                Ok(())
            } else {
                Err(Error::State("self-check failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
