use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mfclab::experiments::{run_experiment, suite, ExperimentConfig};
use mfclab::plot::{emit_plot, PlotSpec};
use mfclab::report::RunReport;

#[derive(Parser)]
#[command(name = "mfclab", about = "Numerical laboratory for mean-field control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config file.
    Run {
        /// Path to the experiment configuration (JSON).
        config: PathBuf,
        /// Output directory for artifacts and the report.
        #[arg(long, default_value = "mfclab-out")]
        out: PathBuf,
    },
    /// Run a named built-in suite, or all of them.
    Suite {
        /// Suite name, or "all".
        name: String,
        /// Root output directory; each suite writes to its own subdirectory.
        #[arg(long, default_value = "mfclab-out")]
        out: PathBuf,
    },
    /// Render a two-column CSV as an SVG plot.
    Plot {
        csv: PathBuf,
        /// Plot log10 of both axes and overlay the fitted line.
        #[arg(long)]
        loglog: bool,
        /// Output path; defaults to the CSV path with an .svg extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the convergence-rate exponents for a dimension.
    Exponents {
        #[arg(long)]
        d: u32,
    },
}

fn print_report(report: &RunReport) {
    println!(
        "[{}] {} (seed {}, {:.1}s)",
        if report.passed { "PASS" } else { "FAIL" },
        report.kind,
        report.seed,
        report.wall_clock.as_secs_f64()
    );
    for line in report.summary_lines() {
        println!("{line}");
    }
}

fn main_inner() -> Result<bool> {
    mfclab::configure_threads();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let cfg: ExperimentConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", config.display()))?;
            let report = run_experiment(&cfg, &out)?;
            print_report(&report);
            Ok(report.passed)
        }
        Command::Suite { name, out } => {
            let reports = suite(&name, &out)?;
            let mut all_passed = true;
            for report in &reports {
                print_report(report);
                all_passed &= report.passed;
            }
            println!(
                "suite {}: {}/{} experiments passed",
                name,
                reports.iter().filter(|r| r.passed).count(),
                reports.len()
            );
            Ok(all_passed)
        }
        Command::Plot { csv, loglog, out } => {
            let target = emit_plot(&csv, PlotSpec { loglog }, out.as_deref())?;
            println!("wrote {}", target.display());
            Ok(true)
        }
        Command::Exponents { d } => {
            let e = mfclab_core::quantize::rate_exponents(d)?;
            println!("d = {}", e.d);
            println!("gamma       = {}/{}", e.gamma.numer(), e.gamma.denom());
            println!("gamma_prime = {}/{}", e.gamma_prime.numer(), e.gamma_prime.denom());
            println!("s_star      = {}", e.s_star);
            println!("sampling rate   r_N  = {}", e.r_nd);
            println!("quantizer rate  r'_N = {}", e.r_dn);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
