//! Command-line entry points. Exit codes: 0 success, 1 estimation failure,
//! 2 invalid input.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::bench::{run_benchmark, Estimator};
use crate::error::{Error, Result};
use crate::io::{read_csv_file, write_covariance_file, write_json, Diagnostics};
use crate::pipeline::{run_pipeline, Centering, PipelineConfig};
use crate::select::Method;
use crate::synth::ScenarioConfig;
use crate::validate::{validate_coverage, DEFAULT_FRESH_DRAWS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ESTIMATION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "clipcert", version, about = "Norm-clipped covariance estimation with certified error envelopes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a covariance matrix from a CSV file.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        /// Covariance CSV destination.
        #[arg(long)]
        output: PathBuf,
        /// Diagnostics JSON destination [default: OUTPUT with extension .diagnostics.json]
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Skip the first CSV line.
        #[arg(long)]
        header: bool,
        #[arg(long, value_enum, default_value = "none")]
        center: Centering,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 2)]
        folds: usize,
        #[arg(long, default_value_t = 2.0)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        cbias: f64,
        #[arg(long, value_enum, default_value = "minupper")]
        selector: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a synthetic benchmark scenario described by a JSON file.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Directory for report.md, rows.csv and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of ours-minupper, ours-lepski, scm, mom-entry.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
    },
    /// Monte Carlo coverage check of the variance certificate on Gaussian data.
    Validate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        folds: usize,
        /// Variance confidence level.
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fresh draws for the conditional-mean reference.
        #[arg(long, default_value_t = DEFAULT_FRESH_DRAWS)]
        fresh: usize,
    },
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_ESTIMATION
            }
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Estimate {
            input,
            output,
            diagnostics,
            header,
            center,
            delta,
            folds,
            rho,
            cbias,
            selector,
            seed,
        } => {
            let data = read_csv_file(&input, header)?;
            let config = PipelineConfig { folds, delta, rho, c_bias: cbias, seed, selector, center };
            let out = run_pipeline(&data, &config)?;
            write_covariance_file(&output, out.estimate())?;
            let diag_path = diagnostics.unwrap_or_else(|| output.with_extension("diagnostics.json"));
            write_json(&diag_path, &Diagnostics::new(data.n(), &config, &out))?;
            eprintln!(
                "selected gamma = {} (grid position {} of {}), certified envelope = {:.6e}",
                out.selection.gamma,
                out.selection.index + 1,
                out.grid.len(),
                out.certified_variance()
            );
            Ok(())
        }
        Command::Bench { config, out, estimators } => {
            let text = fs::read_to_string(&config)?;
            let scenario = ScenarioConfig::from_json(&text).map_err(|e| match e {
                Error::Config(m) => Error::Input(m),
                other => other,
            })?;
            let estimators = match estimators {
                None => Estimator::ALL.to_vec(),
                Some(names) => names
                    .iter()
                    .map(|s| s.trim().parse::<Estimator>())
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::Input(e.to_string()))?,
            };
            let report = run_benchmark(&scenario, &estimators)?;
            let table = report.to_markdown();
            print!("{table}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("report.md"), &table)?;
                fs::write(dir.join("rows.csv"), report.rows_csv(true)?)?;
                write_json(&dir.join("report.json"), &report)?;
            }
            Ok(())
        }
        Command::Validate { n, d, folds, delta, reps, seed, fresh } => {
            let report = validate_coverage(n, d, folds, delta, reps, seed, fresh)
                .map_err(|e| match e {
                    Error::Config(m) => Error::Input(m),
                    other => other,
                })?;
            println!("{}", report.summary());
            Ok(())
        }
    }
}
