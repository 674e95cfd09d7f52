//! Configuration-driven front end for the `screg` library.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use config::{parse_config, Command, RunConfig, SchemaErrors};
use output::{config_digest, Artifacts, Stamp};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping the worker count when `--jobs` is absent.
pub const JOBS_ENV: &str = "SCREG_JOBS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] SchemaErrors),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Run(String),
}

impl From<screg::Error> for CliError {
    fn from(e: screg::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

/// Everything a run needs beyond the configuration document.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub passed: bool,
    pub digest: String,
    pub files: Vec<PathBuf>,
}

pub fn load_config(path: &Path) -> Result<(String, RunConfig), CliError> {
    let document = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config = parse_config(&document)?;
    Ok((document, config))
}

fn worker_count(jobs: Option<usize>) -> Result<Option<usize>, CliError> {
    let jobs = match jobs {
        Some(j) => Some(j),
        None => match std::env::var(JOBS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                CliError::Usage(format!("{JOBS_ENV} must be a positive integer, got {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    if jobs == Some(0) {
        return Err(CliError::Usage("the worker count must be >= 1".into()));
    }
    Ok(jobs)
}

/// Run the configured command and write its artifacts. Nothing is written unless the
/// configuration and options are valid and the command completes.
pub fn run(document: &str, config: &RunConfig, options: &RunOptions) -> Result<RunSummary, CliError> {
    let jobs = worker_count(options.jobs)?;
    let out_dir = options
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("screg-out"));
    let stamp = Stamp {
        command: config.command.name(),
        config_sha256: config_digest(document),
        seed: options.seed.unwrap_or(config.seed),
    };
    let mut artifacts = Artifacts::new(stamp);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Run(format!("worker pool: {e}")))?;
    let outcome = pool.install(|| match config.command {
        Command::Solve => commands::solve(config, &mut artifacts),
        Command::Diagnose => commands::diagnose(config, &mut artifacts),
        Command::Verify => commands::verify(config, &mut artifacts),
        Command::Rates => commands::rates(config, &mut artifacts),
        Command::Concentration => commands::concentration(config, &mut artifacts),
    })?;
    let files = artifacts.write(&out_dir)?;
    Ok(RunSummary {
        passed: outcome.passed,
        digest: outcome.digest,
        files,
    })
}

pub fn exit_code(result: &Result<RunSummary, CliError>) -> i32 {
    match result {
        Ok(s) if s.passed => EXIT_OK,
        Ok(_) => EXIT_CHECK_FAILED,
        Err(_) => EXIT_USAGE,
    }
}
