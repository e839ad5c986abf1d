//! `freespectra` binary: flags in, exit code and artifacts out.
//!
//! Exit codes: 0 when the command ran and its verdict passed, 1 when it ran but the
//! verdict failed, 2 on any execution error (bad flags, bad config, I/O, solver
//! failure). One summary line goes to stdout; errors go to stderr.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use freespectra_cli::config::parse_config;
use freespectra_cli::runner::run;
use freespectra_cli::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "freespectra",
    version,
    about = "Spectral distributions, supports and norms of self-adjoint polynomials in free semicircular elements and deterministic matrices"
)]
struct Cli {
    /// TOML run configuration (see CONFIG.md for the format).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Cap on worker threads. FREESPECTRA_THREADS is honored when absent.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,

    /// Base seed; overrides `seed` from the config.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    match try_main(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn try_main(cli: Cli) -> Result<bool> {
    if let Some(threads) = thread_cap(&cli)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }

    let text = fs::read_to_string(&cli.config).map_err(|source| CliError::Io {
        path: cli.config.clone(),
        source,
    })?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }

    let out_dir = PathBuf::from(&cfg.out_dir);
    let outcome = run(&cfg, &out_dir)?;
    println!("{}", outcome.summary);
    Ok(outcome.pass)
}

/// --threads when given, else FREESPECTRA_THREADS, else leave the pool alone.
fn thread_cap(cli: &Cli) -> Result<Option<usize>> {
    let requested = match cli.threads {
        Some(n) => Some(("--threads".to_string(), n.to_string())),
        None => std::env::var("FREESPECTRA_THREADS")
            .ok()
            .map(|v| ("FREESPECTRA_THREADS".to_string(), v)),
    };
    match requested {
        None => Ok(None),
        Some((source, value)) => match value.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Config(format!(
                "{source} must be a positive integer, got `{value}`"
            ))),
        },
    }
}
