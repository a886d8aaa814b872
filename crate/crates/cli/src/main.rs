use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regkit::pipeline::{self, PipelineConfig, StabilityConfig};
use regkit::{make_phantom, write_pgm, Error};

/// Regularized image restoration, L-curve sweeps and stability experiments.
#[derive(Parser)]
#[command(name = "regkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Blur, add noise and restore an image.
    Restore {
        #[command(subcommand)]
        action: RestoreAction,
    },
    /// Perturbation experiments on a quadratic problem.
    Stability {
        #[command(subcommand)]
        action: StabilityAction,
    },
    /// Write a built-in test image as PGM.
    Phantom {
        /// blocks, cross or ramp
        name: String,
        width: usize,
        height: usize,
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum RestoreAction {
    /// Run the full pipeline described by a config file.
    Run { config: PathBuf },
    /// Only sweep the regularization parameter and report the corner.
    Lcurve { config: PathBuf },
}

#[derive(Subcommand)]
enum StabilityAction {
    Run { config: PathBuf },
}

fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Restore { action: RestoreAction::Run { config } } => {
            let cfg = PipelineConfig::load(&config)?;
            let outcome = pipeline::run_pipeline(&cfg)?;
            let m = outcome.metrics;
            writeln!(out, "penalizer          {}", cfg.penalizer)?;
            writeln!(out, "alpha              {:e}", outcome.alpha)?;
            writeln!(out, "relative L2 error  {:.6}", m.relative_l2_error)?;
            writeln!(out, "degraded error     {:.6}", outcome.degraded_relative_error)?;
            writeln!(out, "PSNR (dB)          {:.3}", m.psnr_db)?;
            writeln!(out, "data residual      {:e}", m.data_residual)?;
        }
        Command::Restore { action: RestoreAction::Lcurve { config } } => {
            let cfg = PipelineConfig::load(&config)?;
            let curve = pipeline::run_lcurve(&cfg)?;
            let idx = regkit::corner(&curve)?.1;
            writeln!(out, "corner alpha {:e} (index {idx} of {})", curve.alphas[idx], curve.len())?;
            if curve.monotone_violation {
                writeln!(out, "warning: residual/penalty columns are not monotone")?;
            }
        }
        Command::Stability { action: StabilityAction::Run { config } } => {
            let cfg = StabilityConfig::load(&config)?;
            let report = pipeline::run_stability_config(&cfg)?;
            report.write_csv(&mut out)?;
            writeln!(out, "k = {:e}, passed = {}", report.k_estimate, report.passed)?;
            if !report.passed {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Phantom { name, width, height, output } => {
            let f = make_phantom(&name, width, height)?;
            fs::write(&output, write_pgm(&f)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
