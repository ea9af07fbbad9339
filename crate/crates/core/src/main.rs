use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nematic::cli_io::commands::{self, StopReason};
use nematic::cli_io::{parse_config, RunConfig};
use nematic::Error;

/// Exit codes beyond 0 (success) and 1 (configuration or I/O failure).
const EXIT_BLOW_UP: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "nematic", version, about = "Navier-Stokes / Q-tensor simulator and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed for random initial data, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the configured initial data.
    Simulate(Common),
    /// Relax the configured Q by gradient flow to an equilibrium.
    Relax(Common),
    /// Run the property checks and write a report.
    Verify(Common),
    /// Fit decay rates from a diagnostics CSV.
    Rate {
        #[command(flatten)]
        common: Common,
        /// Diagnostics CSV written by `simulate`.
        #[arg(long)]
        csv: PathBuf,
        /// Equilibrium snapshot written by `relax`.
        #[arg(long)]
        reference: PathBuf,
    },
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text)?;
    if let Some(dir) = &common.output {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(command: &Command) -> Result<u8, (Error, Option<PathBuf>)> {
    let common = match command {
        Command::Simulate(c) | Command::Relax(c) | Command::Verify(c) => c,
        Command::Rate { common, .. } => common,
    };
    let cfg = load(common).map_err(|e| (e, None))?;
    let out = Some(cfg.output_dir.clone());
    let code = match command {
        Command::Simulate(_) => {
            let s = commands::simulate(&cfg).map_err(|e| (e, out))?;
            println!("simulate: {:?} after {} steps at t={}", s.status, s.steps, s.t_final);
            match s.status {
                StopReason::BlowUp => {
                    eprintln!("{}", s.error.unwrap_or_default());
                    EXIT_BLOW_UP
                }
                _ => 0,
            }
        }
        Command::Relax(_) => {
            let s = commands::relax(&cfg).map_err(|e| (e, out))?;
            println!("relax: residual {:e} after {} steps, converged={}", s.residual, s.steps, s.converged);
            if s.converged {
                0
            } else {
                EXIT_NOT_CONVERGED
            }
        }
        Command::Verify(_) => {
            let r = commands::verify(&cfg).map_err(|e| (e, out))?;
            for c in &r.checks {
                println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
            }
            if r.passed {
                0
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Command::Rate { csv, reference, .. } => {
            let r = commands::rate(&cfg, csv, reference).map_err(|e| (e, out))?;
            for f in &r.fits {
                match (&f.fit, &f.refused) {
                    (Some(fit), _) => println!(
                        "{}: theta_hat={} exp_rate={} preferred={:?}",
                        f.series, fit.theta_hat, fit.exp_rate, fit.preferred
                    ),
                    (None, Some(why)) => println!("{}: {why}", f.series),
                    _ => {}
                }
            }
            0
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err((e, dir)) => {
            eprintln!("error: {e}");
            if let Some(dir) = dir {
                let name = match cli.command {
                    Command::Simulate(_) => "simulate",
                    Command::Relax(_) => "relax",
                    Command::Verify(_) => "verify",
                    Command::Rate { .. } => "rate",
                };
                commands::error_report(&dir, name, &e);
            }
            ExitCode::FAILURE
        }
    }
}
