use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use optomech_cli::runner::{run, Invocation};
use optomech_cli::scenarios::Scenario;

/// Run a named optomechanics scenario and write its outputs and manifest.
#[derive(Debug, Parser)]
#[command(name = "optomech-sim", version)]
struct Args {
    scenario: Scenario,
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Replace a config value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overrides rng_seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "optomech-out")]
    out: PathBuf,
    /// Concurrent sweep points.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = run(&Invocation {
        scenario: args.scenario,
        config: args.config,
        overrides: args.set,
        seed: args.seed,
        out: args.out,
        workers: args.workers,
    });
    if let Some(e) = &outcome.error {
        eprintln!("optomech-sim: {e}");
    }
    ExitCode::from(outcome.exit_code as u8)
}
