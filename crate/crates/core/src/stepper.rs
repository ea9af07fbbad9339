//! First-order IMEX time stepping of the coupled system.
//!
//! Explicit (forward Euler, dealiased, velocity Leray-projected):
//!
//! ```text
//! N_u = P(-u.grad u + lambda div(tau + sigma))
//! N_Q = -u.grad Q + S(grad u, Q) + Gamma (-a Q - c Q tr(Q^2))
//! ```
//!
//! Implicit (backward Euler, diagonal in Fourier space): `nu Lap u` and
//! `Gamma L Lap Q`. The pressure never appears; projection removes it.

use crate::coupling::{
    advect_pointwise, self_advection_pointwise, stress_divergence_spectral, stress_sigma,
    stress_tau_with, stretching_pointwise, QGradient, Tensor2Field, VelocityGradient,
};
use crate::diagnostics::{DiagnosticsRow, RowSampler};
use crate::energetics::{bulk_force, reaction_time_bound};
use crate::error::{Error, Result};
use crate::fields::{max_abs, Parameters, QTensorField, SimState, VelocityField};
use crate::spectral::{Axis, Spectral, SpectralField};

/// Max-norm threshold above which a run is declared blown up.
pub const BLOW_UP_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    /// Base (and, when adaptive, maximal) time step.
    pub dt: f64,
    /// Safety factor in `(0, 1]` applied to the stability bounds.
    pub cfl: f64,
    pub adaptive: bool,
    pub t_end: f64,
    /// Diagnostics cadence in steps.
    pub sample_every: usize,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            cfl: 0.5,
            adaptive: false,
            t_end: 1.0,
            sample_every: 10,
        }
    }
}

impl StepperConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            errs.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            errs.push(format!("cfl must lie in (0, 1], got {}", self.cfl));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            errs.push(format!("t_end must be non-negative, got {}", self.t_end));
        }
        if self.sample_every == 0 {
            errs.push("sample_every must be at least 1".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(errs.join("; ")))
        }
    }
}

/// Explicit tendencies and current state, all in coefficient space.
struct Tendencies {
    u1: SpectralField,
    u2: SpectralField,
    p: SpectralField,
    q: SpectralField,
    nu1: SpectralField,
    nu2: SpectralField,
    np: SpectralField,
    nq: SpectralField,
    /// `max |grad u|` at the current state.
    grad_max: f64,
}

fn check_finite(term: &'static str, fields: &[&[f64]]) -> Result<()> {
    if fields.iter().all(|f| f.iter().all(|v| v.is_finite())) {
        Ok(())
    } else {
        Err(Error::NonFinite { term })
    }
}

fn tendencies(sp: &Spectral, state: &SimState, params: &Parameters) -> Result<Tendencies> {
    let grid = sp.grid();
    grid.check_same(&state.grid())?;
    let (u, q) = (&state.u, &state.q);
    check_finite("velocity", &[&u.u1, &u.u2])?;
    check_finite("Q", &[&q.p, &q.q])?;

    let (u1, u2) = sp.forward_pair(&u.u1, &u.u2)?;
    let (ph, qh) = sp.forward_pair(&q.p, &q.q)?;

    let (g11, g12) = sp.inverse_pair(&sp.derivative(&u1, Axis::X1, 1), &sp.derivative(&u1, Axis::X2, 1));
    let (g21, g22) = sp.inverse_pair(&sp.derivative(&u2, Axis::X1, 1), &sp.derivative(&u2, Axis::X2, 1));
    let mut gradu = Tensor2Field::zeros(grid);
    (gradu.t11, gradu.t12, gradu.t21, gradu.t22) = (g11, g12, g21, g22);
    let vg = VelocityGradient::from_gradu(gradu);
    let grad_max = vg.max_abs();

    let (dp1, dp2) = sp.inverse_pair(&sp.derivative(&ph, Axis::X1, 1), &sp.derivative(&ph, Axis::X2, 1));
    let (dq1, dq2) = sp.inverse_pair(&sp.derivative(&qh, Axis::X1, 1), &sp.derivative(&qh, Axis::X2, 1));
    let dq = QGradient { dp1, dp2, dq1, dq2 };
    let (lp, lq) = sp.inverse_pair(&sp.laplacian(&ph), &sp.laplacian(&qh));

    let bulk = bulk_force(q, params);
    check_finite("bulk reaction", &[&bulk.p, &bulk.q])?;
    let l = params.l;
    let h = QTensorField::new(
        grid,
        lp.iter().zip(&bulk.p).map(|(d, b)| l * d + b).collect(),
        lq.iter().zip(&bulk.q).map(|(d, b)| l * d + b).collect(),
    )?;
    check_finite("molecular field", &[&h.p, &h.q])?;

    let (s, _) = stretching_pointwise(&vg, q, params)?;
    check_finite("stretching", &[&s.p, &s.q])?;
    let adv = advect_pointwise(u, &dq);
    check_finite("Q advection", &[&adv.p, &adv.q])?;

    let g = params.gamma;
    let qexp = QTensorField::new(
        grid,
        (0..grid.len()).map(|k| -adv.p[k] + s.p[k] + g * bulk.p[k]).collect(),
        (0..grid.len()).map(|k| -adv.q[k] + s.q[k] + g * bulk.q[k]).collect(),
    )?;
    let (mut np, mut nq) = sp.forward_pair(&qexp.p, &qexp.q)?;
    sp.dealias_in_place(&mut np);
    sp.dealias_in_place(&mut nq);

    let stress = stress_tau_with(q, &h, &dq, params).add(&stress_sigma(q, &h));
    check_finite("elastic stress", &[&stress.t11, &stress.t12, &stress.t21, &stress.t22])?;
    let (f1, f2) = stress_divergence_spectral(sp, &stress, params.lambda);

    let uadv = self_advection_pointwise(u, &vg);
    check_finite("momentum advection", &[&uadv.u1, &uadv.u2])?;
    let (mut a1, mut a2) = sp.forward_pair(&uadv.u1, &uadv.u2)?;
    sp.dealias_in_place(&mut a1);
    sp.dealias_in_place(&mut a2);
    let mut nu1 = f1.add(&a1.scaled(-1.0));
    let mut nu2 = f2.add(&a2.scaled(-1.0));
    sp.leray_project_spectral(&mut nu1, &mut nu2);

    Ok(Tendencies {
        u1,
        u2,
        p: ph,
        q: qh,
        nu1,
        nu2,
        np,
        nq,
        grad_max,
    })
}

/// Time derivatives of the semi-discrete system, split by treatment.
#[derive(Debug, Clone)]
pub struct Rhs {
    /// Projected explicit velocity tendency.
    pub explicit_u: VelocityField,
    /// `nu Lap u`, treated implicitly.
    pub diffusion_u: VelocityField,
    pub explicit_q: QTensorField,
    /// `Gamma L Lap Q`, treated implicitly.
    pub diffusion_q: QTensorField,
}

impl Rhs {
    pub fn du(&self) -> VelocityField {
        self.explicit_u.axpy(1.0, &self.diffusion_u)
    }

    pub fn dq(&self) -> QTensorField {
        self.explicit_q.axpy(1.0, &self.diffusion_q)
    }
}

pub fn rhs(sp: &Spectral, state: &SimState, params: &Parameters) -> Result<Rhs> {
    let t = tendencies(sp, state, params)?;
    let grid = sp.grid();
    let (e1, e2) = sp.inverse_pair(&t.nu1, &t.nu2);
    let (d1, d2) = sp.inverse_pair(&sp.laplacian(&t.u1).scaled(params.nu), &sp.laplacian(&t.u2).scaled(params.nu));
    let (ep, eq) = sp.inverse_pair(&t.np, &t.nq);
    let gl = params.gamma * params.l;
    let (dp, dq) = sp.inverse_pair(&sp.laplacian(&t.p).scaled(gl), &sp.laplacian(&t.q).scaled(gl));
    Ok(Rhs {
        explicit_u: VelocityField::new(grid, e1, e2)?,
        diffusion_u: VelocityField::new(grid, d1, d2)?,
        explicit_q: QTensorField::new(grid, ep, eq)?,
        diffusion_q: QTensorField::new(grid, dp, dq)?,
    })
}

fn axpy_spec(x: &SpectralField, alpha: f64, y: &SpectralField) -> SpectralField {
    let mut out = x.clone();
    for (o, v) in out.coeffs.iter_mut().zip(&y.coeffs) {
        *o += v * alpha;
    }
    out
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")))
    }
}

/// Projects the new velocity, returns to grid space and checks for blow-up.
fn finish(sp: &Spectral, t: f64, mut u1: SpectralField, mut u2: SpectralField, p: SpectralField, q: SpectralField) -> Result<SimState> {
    sp.leray_project_spectral(&mut u1, &mut u2);
    let grid = sp.grid();
    let (v1, v2) = sp.inverse_pair(&u1, &u2);
    let (pp, qq) = sp.inverse_pair(&p, &q);
    let next = SimState {
        t,
        u: VelocityField::new(grid, v1, v2)?,
        q: QTensorField::new(grid, pp, qq)?,
    };
    let umax = max_abs(&next.u.u1).max(max_abs(&next.u.u2));
    let qmax = max_abs(&next.q.p).max(max_abs(&next.q.q));
    for (quantity, value) in [("|u|_inf", umax), ("|Q|_inf", qmax)] {
        if !value.is_finite() || value > BLOW_UP_THRESHOLD {
            return Err(Error::BlowUp {
                t: next.t,
                quantity,
                value,
            });
        }
    }
    Ok(next)
}

fn euler_from(sp: &Spectral, state: &SimState, t: &Tendencies, dt: f64, params: &Parameters) -> Result<SimState> {
    let nu_dt = params.nu * dt;
    let gl_dt = params.gamma * params.l * dt;
    finish(
        sp,
        state.t + dt,
        sp.invert_helmholtz(&axpy_spec(&t.u1, dt, &t.nu1), nu_dt),
        sp.invert_helmholtz(&axpy_spec(&t.u2, dt, &t.nu2), nu_dt),
        sp.invert_helmholtz(&axpy_spec(&t.p, dt, &t.np), gl_dt),
        sp.invert_helmholtz(&axpy_spec(&t.q, dt, &t.nq), gl_dt),
    )
}

/// One IMEX Euler step of size `dt`.
pub fn step(sp: &Spectral, state: &SimState, dt: f64, params: &Parameters) -> Result<SimState> {
    check_dt(dt)?;
    let t = tendencies(sp, state, params)?;
    euler_from(sp, state, &t, dt, params)
}

/// Stable step estimate, capped by `config.dt`:
///
/// ```text
/// cfl * min( dx / |u|_inf,
///            1 / ((1 + 2|xi|) |grad u|_inf (|Q|_inf + 1/2)),
///            1 / (Gamma (|a| + 3 c max tr(Q^2))),
///            (nu + Gamma L) / (K (lambda L C2 - nu Gamma L)) )
/// ```
///
/// The second term is the rotation/stretching rate of `S`, written as
/// `dx / v_S` with coupling velocity `v_S = dx * rate`. The last is the
/// explicit `u`-`Q` exchange at the largest retained `K = 4 pi^2 |k|^2`,
/// with `C2` from [`crate::coupling::coupling_strength`]; it only applies
/// when the exchange outgrows the two diffusions.
pub fn cfl_dt(sp: &Spectral, state: &SimState, params: &Parameters, config: &StepperConfig) -> f64 {
    let gmax = crate::coupling::velocity_gradient(sp, &state.u).max_abs();
    cfl_from(sp, state, gmax, params, config)
}

fn cfl_from(sp: &Spectral, state: &SimState, gmax: f64, params: &Parameters, config: &StepperConfig) -> f64 {
    let dx = sp.grid().dx();
    let mut bound = f64::INFINITY;
    let umax = state.u.norm_linf();
    if umax > 0.0 {
        bound = bound.min(dx / umax);
    }
    let s_rate = (1.0 + 2.0 * params.xi.abs()) * gmax * (state.q.norm_linf() + 0.5);
    if s_rate > 0.0 {
        bound = bound.min(1.0 / s_rate);
    }
    bound = bound.min(reaction_time_bound(&state.q, params));
    bound = bound.min(crate::coupling::coupling_time_bound(sp, &state.q, params));
    (config.cfl * bound).min(config.dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Receives every sampled diagnostics row. Must not mutate the state.
pub trait Observer {
    fn observe(&mut self, state: &SimState, row: &DiagnosticsRow) -> Control;
}

impl<F> Observer for F
where
    F: FnMut(&SimState, &DiagnosticsRow) -> Control,
{
    fn observe(&mut self, state: &SimState, row: &DiagnosticsRow) -> Control {
        self(state, row)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: SimState,
    pub steps: usize,
    pub stopped_by_observer: bool,
}

/// A failed run together with the last good state.
#[derive(Debug)]
pub struct RunAbort {
    pub error: Error,
    pub state: SimState,
    pub steps: usize,
}

/// Steps until `t_end` or until the observer asks to stop. Rows are sampled
/// at step 0 and every `sample_every` steps after it.
pub fn run(
    sp: &Spectral,
    initial: SimState,
    params: &Parameters,
    config: &StepperConfig,
    reference: Option<&QTensorField>,
    observer: &mut dyn Observer,
) -> std::result::Result<RunOutcome, Box<RunAbort>> {
    let abort = |error: Error, state: SimState, steps: usize| Box::new(RunAbort { error, state, steps });
    if let Err(e) = config.validate().and_then(|_| params.validate()) {
        return Err(abort(e, initial, 0));
    }
    let mut sampler = RowSampler::new(sp.clone(), *params, reference.cloned());
    let mut state = initial;
    let t0 = state.t;
    let fixed_steps = if config.adaptive {
        None
    } else {
        Some(((config.t_end - t0) / config.dt - 1e-9).ceil().max(0.0) as usize)
    };
    let mut steps = 0usize;

    let sample = |sampler: &mut RowSampler, state: &SimState, observer: &mut dyn Observer| {
        let row = sampler.sample(state)?;
        Ok::<_, Error>(observer.observe(state, &row))
    };
    match sample(&mut sampler, &state, observer) {
        Ok(Control::Stop) => {
            return Ok(RunOutcome {
                state,
                steps,
                stopped_by_observer: true,
            })
        }
        Ok(Control::Continue) => {}
        Err(e) => return Err(abort(e, state, steps)),
    }

    loop {
        let dt = match fixed_steps {
            Some(total) if steps >= total => break,
            Some(_) => Some(config.dt),
            None => {
                let remaining = config.t_end - state.t;
                if remaining <= 1e-12 * config.t_end.max(1.0) {
                    break;
                }
                None
            }
        };
        let advanced = match dt {
            Some(dt) => step(sp, &state, dt, params),
            None => tendencies(sp, &state, params).and_then(|t| {
                let remaining = config.t_end - state.t;
                let dt = cfl_from(sp, &state, t.grad_max, params, config).min(remaining);
                euler_from(sp, &state, &t, dt, params)
            }),
        };
        let next = match advanced {
            Ok(s) => s,
            Err(e) => return Err(abort(e, state, steps)),
        };
        state = next;
        steps += 1;
        if fixed_steps.is_some() {
            // avoid drift from repeated addition
            state.t = t0 + steps as f64 * config.dt;
        }
        if steps % config.sample_every == 0 {
            match sample(&mut sampler, &state, observer) {
                Ok(Control::Stop) => {
                    return Ok(RunOutcome {
                        state,
                        steps,
                        stopped_by_observer: true,
                    })
                }
                Ok(Control::Continue) => {}
                Err(e) => return Err(abort(e, state, steps)),
            }
        }
    }
    Ok(RunOutcome {
        state,
        steps,
        stopped_by_observer: false,
    })
}
