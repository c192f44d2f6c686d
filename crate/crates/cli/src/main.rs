//! `fpf-lab`: experiment runner driven by config files.
//!
//! Exit codes: 0 success, 1 failed checks or I/O, 2 config error,
//! 3 model or precondition error, 4 filter abort.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod expr;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use config::{Experiment, RawConfig};
use error::CliError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Simulate,
    Filter,
    Compare,
    Verify,
}

#[derive(Debug, Parser)]
#[command(name = "fpf-lab", version, about = "Feedback particle filter experiments")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment config (`[section]` headers, `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observation CSV for `filter` and `compare`.
    #[arg(long)]
    obs: Option<PathBuf>,
    /// Output directory; overrides `dir` in `[output]`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suite for `verify`; overrides `suite` in `[verify]`.
    #[arg(long)]
    suite: Option<String>,
    /// Probe seed for `verify`.
    #[arg(long)]
    seed: Option<u64>,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("FPF_LAB_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("FPF_LAB_THREADS must be a non-negative integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn load(cli: &Cli) -> Result<Experiment, CliError> {
    let path = cli.config.as_deref().ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    Experiment::from_raw(RawConfig::load(path)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Simulate => {
            let exp = load(&cli)?;
            let out = commands::output_dir(cli.out.as_deref(), Some(&exp))?;
            for p in commands::simulate(&exp, &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Filter => {
            let exp = load(&cli)?;
            let out = commands::output_dir(cli.out.as_deref(), Some(&exp))?;
            let (path, flagged) = commands::filter(&exp, cli.obs.as_deref(), &out)?;
            println!("wrote {} ({flagged} particle(s) flagged)", path.display());
        }
        Command::Compare => {
            let exp = load(&cli)?;
            let out = commands::output_dir(cli.out.as_deref(), Some(&exp))?;
            let res = commands::compare(&exp, cli.obs.as_deref(), &out)?;
            for p in &res.files {
                println!("wrote {}", p.display());
            }
            print!("{}", res.summary);
        }
        Command::Verify => {
            let (raw, exp_out) = match &cli.config {
                Some(p) => {
                    let raw = RawConfig::load(p)?;
                    let dir = raw.get("output", "dir").map(PathBuf::from);
                    (Some(raw), dir)
                }
                None => (None, None),
            };
            let (suite, seed) = commands::verify_target(cli.suite.as_deref(), cli.seed, raw.as_ref())?;
            let out = cli.out.clone().or(exp_out).unwrap_or_else(|| PathBuf::from("."));
            let out = commands::output_dir(Some(&out), None)?;
            let res = commands::verify(&suite, seed, &out)?;
            println!("wrote {}", res.path.display());
            println!("{suite}: {}/{} checks passed", res.passed, res.total);
            if res.passed != res.total {
                return Err(CliError::ChecksFailed(format!("{suite}: {} check(s) failed", res.total - res.passed)));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fpf-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
