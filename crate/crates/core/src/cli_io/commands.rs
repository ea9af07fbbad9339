//! The four subcommands as library functions. Each writes its outputs under
//! the configured output directory and returns a summary; the binary maps
//! summaries to exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::config::RunConfig;
use super::snapshot::{read_snapshot, write_snapshot};
use super::table::{read_diagnostics, DiagnosticsWriter};
use super::verify::{run_checks, Check};
use crate::diagnostics::{decay_regime_start, fit_convergence_rate, DiagnosticsRow, RateFit, SeriesKind, EQUILIBRIUM_TOL};
use crate::energetics::{molecular_field, relax_to_equilibrium};
use crate::error::{Error, Result};
use crate::fields::{SimState, VelocityField};
use crate::spectral::Spectral;
use crate::stepper::{run, Control};

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const FINAL_FILE: &str = "final.bin";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const SUMMARY_FILE: &str = "summary.json";
pub const QINF_FILE: &str = "qinf.bin";
pub const RELAX_REPORT: &str = "relax.json";
pub const VERIFY_REPORT: &str = "verify.json";
pub const RATE_REPORT: &str = "rate.json";

/// A fit window ends once the norm has dropped by this many decades from
/// its value at the start of the decay regime, before roundoff takes over.
pub const FIT_DECADES: f64 = 10.0;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serialisable report");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EndTime,
    Equilibrium,
    BlowUp,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub status: StopReason,
    pub steps: usize,
    pub t_final: f64,
    pub rows: usize,
    pub error: Option<String>,
}

pub fn snapshot_name(step: usize) -> String {
    format!("step_{step:09}.bin")
}

/// Runs the configured simulation. Blow-up is reported in the summary with
/// the last good state written to `checkpoint.bin`; other failures are errors.
pub fn simulate(cfg: &RunConfig) -> Result<SimulateSummary> {
    let sp = Spectral::new(cfg.grid()?);
    let initial = cfg.initial_state(&sp)?;
    let reference = match &cfg.reference {
        Some(path) => Some(read_snapshot(path, Some(sp.grid()))?.q),
        None => None,
    };
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    if cfg.snapshot_every > 0 {
        ensure_dir(&out.join(SNAPSHOT_DIR))?;
    }
    let mut writer = DiagnosticsWriter::create(&out.join(DIAGNOSTICS_FILE))?;
    let mut rows = 0usize;
    let mut failure: Option<Error> = None;
    let mut equilibrium = false;
    let every = cfg.stepper.sample_every;

    let mut observer = |state: &SimState, row: &DiagnosticsRow| {
        let step = rows * every;
        rows += 1;
        let mut io = writer.write(row);
        if io.is_ok() && cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0 {
            io = write_snapshot(&out.join(SNAPSHOT_DIR).join(snapshot_name(step)), state);
        }
        if let Err(e) = io {
            failure = Some(e);
            return Control::Stop;
        }
        if cfg.stop_at_equilibrium && row.u_H1 <= cfg.equilibrium_tol_u && row.H_L2sq.sqrt() <= cfg.equilibrium_tol_h {
            equilibrium = true;
            return Control::Stop;
        }
        Control::Continue
    };
    let result = run(&sp, initial, &cfg.params, &cfg.stepper, reference.as_ref(), &mut observer);
    writer.flush()?;
    if let Some(e) = failure {
        return Err(e);
    }
    let summary = match result {
        Ok(outcome) => {
            write_snapshot(&out.join(FINAL_FILE), &outcome.state)?;
            SimulateSummary {
                status: if equilibrium { StopReason::Equilibrium } else { StopReason::EndTime },
                steps: outcome.steps,
                t_final: outcome.state.t,
                rows,
                error: None,
            }
        }
        Err(abort) => match abort.error {
            Error::BlowUp { .. } | Error::NonFinite { .. } => {
                write_snapshot(&out.join(CHECKPOINT_FILE), &abort.state)?;
                SimulateSummary {
                    status: StopReason::BlowUp,
                    steps: abort.steps,
                    t_final: abort.state.t,
                    rows,
                    error: Some(abort.error.to_string()),
                }
            }
            other => return Err(other),
        },
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct RelaxSummary {
    pub converged: bool,
    pub residual: f64,
    pub steps: usize,
    pub energy_initial: f64,
    pub energy_final: f64,
    /// Largest per-step free-energy increase (non-positive when monotone).
    pub max_energy_increase: f64,
    pub output: PathBuf,
}

/// Gradient flow of the configured initial `Q`. The result is written as a
/// snapshot with zero velocity whether or not it converged.
pub fn relax(cfg: &RunConfig) -> Result<RelaxSummary> {
    let sp = Spectral::new(cfg.grid()?);
    let q0 = cfg.initial_state(&sp)?.q;
    let outcome = relax_to_equilibrium(&sp, &q0, &cfg.params, cfg.relax_tol, cfg.relax_max_steps)?;
    ensure_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join(QINF_FILE);
    let state = SimState::new(0.0, VelocityField::zeros(sp.grid()), outcome.q.clone())?;
    write_snapshot(&path, &state)?;
    let e = &outcome.energies;
    let summary = RelaxSummary {
        converged: outcome.converged,
        residual: outcome.residual,
        steps: outcome.steps,
        energy_initial: e[0],
        energy_final: *e.last().expect("initial energy recorded"),
        max_energy_increase: e.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max),
        output: path,
    };
    write_json(&cfg.output_dir.join(RELAX_REPORT), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

pub fn verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let checks = run_checks(cfg.grid()?, &cfg.params, cfg.seed)?;
    let report = VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    ensure_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join(VERIFY_REPORT), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesFit {
    pub series: &'static str,
    pub window: [f64; 2],
    pub fit: Option<RateFit>,
    pub refused: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub reference_residual: f64,
    pub decay_start: f64,
    pub fits: Vec<SeriesFit>,
}

/// Rows from `start` until the series has dropped by [`FIT_DECADES`].
pub fn fit_window(rows: &[DiagnosticsRow], start: usize, value: impl Fn(&DiagnosticsRow) -> f64, kind: SeriesKind) -> (Vec<f64>, Vec<f64>) {
    let decades = match kind {
        SeriesKind::Norm => FIT_DECADES,
        SeriesKind::SquaredNorm => 2.0 * FIT_DECADES,
    };
    let first = value(&rows[start]);
    let floor = first * 10f64.powf(-decades);
    rows[start..]
        .iter()
        .take_while(|r| value(r) >= floor)
        .map(|r| (r.t, value(r)))
        .unzip()
}

/// Fits the decay of `A` and, when the run logged it, `|Q - Qinf|_H2`.
pub fn rate(cfg: &RunConfig, csv: &Path, reference: &Path) -> Result<RateReport> {
    let rows = read_diagnostics(csv)?;
    let qinf = read_snapshot(reference, None)?.q;
    let sp = Spectral::new(qinf.grid());
    let residual = molecular_field(&sp, &qinf, &cfg.params).norm_l2();
    if !(residual <= EQUILIBRIUM_TOL) {
        return Err(Error::NotEquilibrium(residual));
    }
    let start = decay_regime_start(&rows, cfg.decay_tol_u, cfg.decay_tol_h)
        .ok_or_else(|| Error::FitRefused("run never reached the decay regime".into()))?;
    let mut fits = Vec::new();
    let series: [(&'static str, fn(&DiagnosticsRow) -> f64, SeriesKind); 2] = [
        ("A", |r| r.A, SeriesKind::SquaredNorm),
        ("Q_minus_Qinf_H2", |r| r.Q_minus_Qinf_H2, SeriesKind::Norm),
    ];
    for (name, value, kind) in series {
        if !value(&rows[start]).is_finite() {
            continue;
        }
        let (t, y) = fit_window(&rows, start, value, kind);
        let window = [t.first().copied().unwrap_or(f64::NAN), t.last().copied().unwrap_or(f64::NAN)];
        let (fit, refused) = match fit_convergence_rate(&t, &y, kind) {
            Ok(f) => (Some(f), None),
            Err(e @ (Error::FitRefused(_) | Error::InsufficientSamples { .. })) => (None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        fits.push(SeriesFit {
            series: name,
            window,
            fit,
            refused,
        });
    }
    let report = RateReport {
        reference_residual: residual,
        decay_start: rows[start].t,
        fits,
    };
    ensure_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join(RATE_REPORT), &report)?;
    Ok(report)
}

/// Report value for a failed command, written next to the other outputs.
pub fn error_report(dir: &Path, command: &str, error: &Error) {
    let _ = ensure_dir(dir).and_then(|_| {
        write_json(
            &dir.join(format!("{command}_error.json")),
            &json!({ "command": command, "error": error.to_string() }),
        )
    });
}
