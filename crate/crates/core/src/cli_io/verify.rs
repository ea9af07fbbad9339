//! Property checks run by the `verify` subcommand.
//!
//! Each check returns a [`Check`] with its measured values so the report is
//! self-describing. The data are smooth band-limited fields built from the
//! configured seed, parameters and grid.

use serde::Serialize;
use serde_json::{json, Value};

use crate::diagnostics::{
    energy_law_residual, identity_residual, identity_terms, EnergySample, IdentityTerms,
};
use crate::energetics::{free_energy, molecular_field};
use crate::error::Result;
use crate::fields::{Grid, Parameters, QTensorField, SimState, VelocityField};
use crate::init::{random_q, random_smooth_velocity};
use crate::spectral::{Axis, Spectral};
use crate::stepper::{run, Control, StepperConfig};

/// Time steps of the energy-law sweep.
pub const ENERGY_DTS: [f64; 3] = [1e-3, 5e-4, 2.5e-4];
/// The sweep integrates over `[0, ENERGY_T_END]` and judges `t >= ENERGY_WINDOW_START`.
pub const ENERGY_T_END: f64 = 1.0;
pub const ENERGY_WINDOW_START: f64 = 0.1;
/// Largest admissible ratio of successive maxima when `dt` halves.
pub const ENERGY_RATIO_MAX: f64 = 0.6;
pub const ENERGY_FINEST_MAX: f64 = 1e-3;

pub const IDENTITY_PROBES: [f64; 3] = [1e-4, 5e-5, 2.5e-5];
pub const IDENTITY_MAX: f64 = 1e-3;
/// Halving `dt_probe` must shrink the residual at least this much.
pub const IDENTITY_RATIO_MAX: f64 = 0.6;
pub const FINE_GRID_REL: f64 = 1e-6;
/// Terms below this fraction of the largest `|J|` are compared absolutely.
pub const FINE_GRID_FLOOR: f64 = 1e-8;

pub const XI_ZERO_MAX: f64 = 1e-12;
pub const VARIATION_REL: f64 = 1e-6;
pub const PROJECTION_MAX: f64 = 1e-12;
pub const DERIVATIVE_MAX: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: Value,
}

/// Smooth verification data: velocity of amplitude 0.2 and `Q` of amplitude
/// 0.5 on the band `max|k| <= 2`.
pub fn verification_state(sp: &Spectral, seed: u64) -> SimState {
    SimState::new(
        0.0,
        random_smooth_velocity(sp, seed, 2.0, 2, 0.2),
        random_q(sp, seed, 2.0, 2, 0.5),
    )
    .expect("same grid")
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergySweepPoint {
    pub dt: f64,
    /// Maximum relative residual over the whole history.
    pub max_relative_full: f64,
    /// Maximum relative residual for `t >= ENERGY_WINDOW_START`.
    pub max_relative: f64,
}

/// Fixed-step runs at each `dt`, sampling every step.
pub fn energy_sweep(sp: &Spectral, initial: &SimState, params: &Parameters) -> Result<Vec<EnergySweepPoint>> {
    let mut out = Vec::new();
    for dt in ENERGY_DTS {
        let config = StepperConfig {
            dt,
            cfl: 1.0,
            adaptive: false,
            t_end: ENERGY_T_END,
            sample_every: 1,
        };
        let mut samples = Vec::new();
        let mut observer = |_: &SimState, row: &crate::diagnostics::DiagnosticsRow| {
            samples.push(EnergySample::from_row(row, params));
            Control::Continue
        };
        run(sp, initial.clone(), params, &config, None, &mut observer).map_err(|abort| abort.error)?;
        let law = energy_law_residual(&samples)?;
        let windowed = law
            .times
            .iter()
            .zip(&law.relative)
            .filter(|(t, _)| **t >= ENERGY_WINDOW_START - 1e-12)
            .fold(0.0f64, |m, (_, r)| m.max(*r));
        out.push(EnergySweepPoint {
            dt,
            max_relative_full: law.max_relative,
            max_relative: windowed,
        });
    }
    Ok(out)
}

pub fn energy_check(sweep: &[EnergySweepPoint]) -> Check {
    let ratios: Vec<f64> = sweep.windows(2).map(|w| w[1].max_relative / w[0].max_relative).collect();
    let finest = sweep.last().map_or(f64::NAN, |p| p.max_relative);
    let passed = ratios.iter().all(|r| *r <= ENERGY_RATIO_MAX) && finest <= ENERGY_FINEST_MAX;
    Check {
        name: "energy_law".into(),
        passed,
        detail: json!({ "sweep": sweep, "ratios": ratios, "finest": finest,
            "window_start": ENERGY_WINDOW_START, "ratio_max": ENERGY_RATIO_MAX, "finest_max": ENERGY_FINEST_MAX }),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentitySweep {
    pub seed: u64,
    pub residuals: Vec<f64>,
    pub ratios: Vec<f64>,
}

pub fn identity_sweep(sp: &Spectral, state: &SimState, params: &Parameters, seed: u64) -> Result<IdentitySweep> {
    let residuals = IDENTITY_PROBES
        .iter()
        .map(|&h| identity_residual(sp, state, params, h).map(|r| r.residual))
        .collect::<Result<Vec<_>>>()?;
    let ratios = residuals.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(IdentitySweep { seed, residuals, ratios })
}

pub fn identity_check(sweeps: &[IdentitySweep]) -> Check {
    let passed = sweeps.iter().all(|s| {
        s.residuals.last().is_some_and(|r| *r <= IDENTITY_MAX) && s.ratios.iter().all(|r| *r <= IDENTITY_RATIO_MAX)
    });
    Check {
        name: "identity".into(),
        passed,
        detail: json!({ "probes": IDENTITY_PROBES, "states": sweeps,
            "max": IDENTITY_MAX, "ratio_max": IDENTITY_RATIO_MAX }),
    }
}

/// Spectral interpolation of a band-limited state onto a finer grid.
pub fn refine(sp: &Spectral, state: &SimState, fine: &Spectral) -> Result<SimState> {
    let target = fine.grid();
    let lift = |f: &[f64]| -> Result<Vec<f64>> { Ok(fine.inverse(&sp.resample(&sp.forward(f)?, target))) };
    SimState::new(
        state.t,
        VelocityField::new(target, lift(&state.u.u1)?, lift(&state.u.u2)?)?,
        QTensorField::new(target, lift(&state.q.p)?, lift(&state.q.q)?)?,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct FineGridComparison {
    pub coarse: IdentityTerms,
    pub fine: IdentityTerms,
    /// `|J - J_fine| / max(|J_fine|, floor)` per term.
    pub relative: [f64; 12],
}

pub fn fine_grid_comparison(sp: &Spectral, state: &SimState, params: &Parameters) -> Result<FineGridComparison> {
    let fine_sp = Spectral::new(Grid::new(2 * sp.grid().n())?);
    let coarse = identity_terms(sp, state, params)?;
    let fine = identity_terms(&fine_sp, &refine(sp, state, &fine_sp)?, params)?;
    let floor = FINE_GRID_FLOOR * fine.j.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut relative = [0.0; 12];
    for (i, r) in relative.iter_mut().enumerate() {
        let diff = (coarse.j[i] - fine.j[i]).abs();
        *r = if diff == 0.0 { 0.0 } else { diff / fine.j[i].abs().max(floor) };
    }
    Ok(FineGridComparison { coarse, fine, relative })
}

pub fn fine_grid_check(comparisons: &[FineGridComparison]) -> Check {
    let worst = comparisons
        .iter()
        .flat_map(|c| c.relative.iter().copied())
        .fold(0.0f64, f64::max);
    Check {
        name: "identity_terms_fine_grid".into(),
        passed: worst <= FINE_GRID_REL,
        detail: json!({ "worst_relative": worst, "tolerance": FINE_GRID_REL,
            "relative": comparisons.iter().map(|c| c.relative).collect::<Vec<_>>() }),
    }
}

/// Largest `|J6..J9|` over the given states, which must use `xi = 0`.
pub fn xi_zero_terms(sp: &Spectral, states: &[SimState], params: &Parameters) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in states {
        let t = identity_terms(sp, s, params)?;
        worst = t.j[5..9].iter().fold(worst, |m, v| m.max(v.abs()));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VariationSample {
    pub directional: f64,
    pub finite_difference: f64,
    pub relative: f64,
}

/// `<-H(Q), dQ>` against the central difference of the free energy.
pub fn variation_sample(sp: &Spectral, q: &QTensorField, dq: &QTensorField, params: &Parameters) -> VariationSample {
    let h = molecular_field(sp, q, params);
    let directional = -h.inner(dq);
    let eps = 1e-4;
    let plus = free_energy(sp, &q.axpy(eps, dq), params);
    let minus = free_energy(sp, &q.axpy(-eps, dq), params);
    let finite_difference = (plus - minus) / (2.0 * eps);
    VariationSample {
        directional,
        finite_difference,
        relative: (directional - finite_difference).abs() / directional.abs().max(finite_difference.abs()),
    }
}

/// `max |k . u_hat|` after projecting a random non-solenoidal field.
pub fn projection_defect(sp: &Spectral, seed: u64) -> Result<(f64, f64)> {
    let a = random_q(sp, seed, 1.0, sp.grid().n() / 3, 1.0);
    let u = VelocityField::new(sp.grid(), a.p, a.q)?;
    let v = sp.leray_project(&u);
    let (v1, v2) = sp.forward_pair(&v.u1, &v.u2)?;
    Ok((sp.divergence_max(&v1, &v2), v.norm_l2()))
}

/// Worst error of spectral first and second derivatives of a trigonometric
/// polynomial against its exact derivatives.
pub fn derivative_defect(sp: &Spectral) -> Result<f64> {
    use std::f64::consts::PI;
    let g = sp.grid();
    let w = 2.0 * PI;
    let f = g.sample(|x, y| (w * x).sin() * (2.0 * w * y).cos() + (3.0 * w * y).sin());
    let fx = g.sample(|x, y| w * (w * x).cos() * (2.0 * w * y).cos());
    let fyy = g.sample(|x, y| -4.0 * w * w * (w * x).sin() * (2.0 * w * y).cos() - 9.0 * w * w * (3.0 * w * y).sin());
    let fh = sp.forward(&f)?;
    let dx = sp.inverse(&sp.derivative(&fh, Axis::X1, 1));
    let dyy = sp.inverse(&sp.derivative(&fh, Axis::X2, 2));
    let err = |a: &[f64], b: &[f64]| {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    };
    Ok(err(&dx, &fx).max(err(&dyy, &fyy)))
}

/// Runs every check for `params` on `grid` with data from `seed`.
pub fn run_checks(grid: Grid, params: &Parameters, seed: u64) -> Result<Vec<Check>> {
    let sp = Spectral::new(grid);
    let mut checks = Vec::new();

    let sweep = energy_sweep(&sp, &verification_state(&sp, seed), params);
    checks.push(match sweep {
        Ok(s) => energy_check(&s),
        Err(e) => failed("energy_law", &e),
    });

    let states: Vec<SimState> = (0..3).map(|i| verification_state(&sp, seed + 10 + i)).collect();
    let sweeps: Result<Vec<_>> = states
        .iter()
        .zip(seed + 10..)
        .map(|(s, sd)| identity_sweep(&sp, s, params, sd))
        .collect();
    checks.push(match sweeps {
        Ok(s) => identity_check(&s),
        Err(e) => failed("identity", &e),
    });

    let comparisons: Result<Vec<_>> = states.iter().map(|s| fine_grid_comparison(&sp, s, params)).collect();
    checks.push(match comparisons {
        Ok(c) => fine_grid_check(&c),
        Err(e) => failed("identity_terms_fine_grid", &e),
    });

    if params.xi == 0.0 {
        let worst = xi_zero_terms(&sp, &states, params)?;
        checks.push(Check {
            name: "xi_zero_terms_vanish".into(),
            passed: worst <= XI_ZERO_MAX,
            detail: json!({ "max_abs_j6_to_j9": worst, "tolerance": XI_ZERO_MAX }),
        });
    }

    let samples: Vec<VariationSample> = (0..20)
        .map(|i| {
            let q = random_q(&sp, seed + 100 + i, 2.0, 4, 0.8);
            let dq = random_q(&sp, seed + 200 + i, 2.0, 4, 1.0);
            variation_sample(&sp, &q, &dq, params)
        })
        .collect();
    let worst = samples.iter().fold(0.0f64, |m, s| m.max(s.relative));
    checks.push(Check {
        name: "gradient_consistency".into(),
        passed: worst <= VARIATION_REL,
        detail: json!({ "worst_relative": worst, "tolerance": VARIATION_REL, "samples": samples }),
    });

    let (div, norm) = projection_defect(&sp, seed)?;
    checks.push(Check {
        name: "projection".into(),
        passed: div <= PROJECTION_MAX * norm.max(1.0),
        detail: json!({ "max_k_dot_u": div, "norm": norm, "tolerance": PROJECTION_MAX }),
    });

    let d = derivative_defect(&sp)?;
    checks.push(Check {
        name: "derivatives".into(),
        passed: d <= DERIVATIVE_MAX,
        detail: json!({ "max_relative_error": d, "tolerance": DERIVATIVE_MAX }),
    });
    Ok(checks)
}

fn failed(name: &str, e: &crate::error::Error) -> Check {
    Check {
        name: name.into(),
        passed: false,
        detail: json!({ "error": e.to_string() }),
    }
}
