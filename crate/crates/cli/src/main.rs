use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use screg_cli::{exit_code, load_config, run, RunOptions};

/// Regularized ERM experiments for self-concordant losses.
///
/// Exit status: 0 on success, 1 when a check fails, 2 on usage, configuration or
/// runtime errors. Worker count defaults to `SCREG_JOBS` when `--jobs` is absent.
#[derive(Debug, Parser)]
#[command(name = "screg", version)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Base seed; overrides the configuration's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for experiment cells.
    #[arg(long)]
    jobs: Option<usize>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = load_config(&args.config).and_then(|(document, config)| {
        let options = RunOptions {
            seed: args.seed,
            out: args.out.clone(),
            jobs: args.jobs,
        };
        run(&document, &config, &options)
    });
    match &result {
        Ok(summary) => {
            if !args.quiet || !summary.passed {
                let status = if summary.passed { "ok" } else { "FAILED" };
                println!("{} [{status}]", summary.digest);
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
