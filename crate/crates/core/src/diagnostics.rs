//! Measurements along a run: energies, the higher-order energy `A`,
//! dissipation, the twelve-term evolution identity for `A`, the Lyapunov
//! functional `Y` and decay-rate fits.
//!
//! Norms are Frobenius `L^2` norms over the unit torus. With `L != 1` the
//! identity closes for the weighted energy
//!
//! ```text
//! A_L = |grad u|^2 + (lambda / L) |H|^2
//! 1/2 dA_L/dt + nu |Lap u|^2 + lambda Gamma |grad H|^2 = J1 + ... + J12
//! ```
//!
//! which reduces to the reported `A = |grad u|^2 + lambda |H|^2` at `L = 1`.

use std::f64::consts::{E, PI};

use serde::Serialize;

use crate::coupling::{stretching_pointwise, velocity_gradient};
use crate::energetics::{bulk_density, bulk_energy, bulk_force, grad_q_norm_sq, linearized_f, molecular_field, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::fields::{max_abs, tr_q2, Parameters, QTensorField, SimState, VelocityField};
use crate::spectral::{Axis, Spectral};
use crate::stepper::{rhs, BLOW_UP_THRESHOLD};

/// Largest `|H(Q_inf)|` accepted for a reference equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

/// Smallest series accepted by [`fit_convergence_rate`].
pub const MIN_FIT_SAMPLES: usize = 20;

/// One sampled line of the diagnostics log; fields in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub E_total: f64,
    pub E_kinetic: f64,
    pub E_elastic: f64,
    pub E_bulk: f64,
    pub grad_u_L2sq: f64,
    pub H_L2sq: f64,
    pub A: f64,
    pub B: f64,
    pub div_u_max: f64,
    pub Q_Linf: f64,
    pub u_H1: f64,
    /// NaN without a reference equilibrium.
    pub Q_minus_Qinf_H2: f64,
    /// `dE/dt + D` by a one-sided difference against the previous row and
    /// the trapezoid average of `D`; NaN on the first row.
    pub energy_residual: f64,
}

impl DiagnosticsRow {
    pub const COLUMNS: [&'static str; 14] = [
        "t",
        "E_total",
        "E_kinetic",
        "E_elastic",
        "E_bulk",
        "grad_u_L2sq",
        "H_L2sq",
        "A",
        "B",
        "div_u_max",
        "Q_Linf",
        "u_H1",
        "Q_minus_Qinf_H2",
        "energy_residual",
    ];

    pub fn values(&self) -> [f64; 14] {
        [
            self.t,
            self.E_total,
            self.E_kinetic,
            self.E_elastic,
            self.E_bulk,
            self.grad_u_L2sq,
            self.H_L2sq,
            self.A,
            self.B,
            self.div_u_max,
            self.Q_Linf,
            self.u_H1,
            self.Q_minus_Qinf_H2,
            self.energy_residual,
        ]
    }

    pub fn from_values(v: [f64; 14]) -> Self {
        Self {
            t: v[0],
            E_total: v[1],
            E_kinetic: v[2],
            E_elastic: v[3],
            E_bulk: v[4],
            grad_u_L2sq: v[5],
            H_L2sq: v[6],
            A: v[7],
            B: v[8],
            div_u_max: v[9],
            Q_Linf: v[10],
            u_H1: v[11],
            Q_minus_Qinf_H2: v[12],
            energy_residual: v[13],
        }
    }

    /// `nu |grad u|^2 + lambda Gamma |H|^2`.
    pub fn dissipation(&self, params: &Parameters) -> f64 {
        params.nu * self.grad_u_L2sq + params.lambda * params.gamma * self.H_L2sq
    }
}

/// `1/2 |u|^2 + lambda (L/2) |grad Q|^2 + lambda int f_B`.
pub fn total_energy(sp: &Spectral, state: &SimState, params: &Parameters) -> EnergyBreakdown {
    EnergyBreakdown::new(
        0.5 * state.u.inner(&state.u),
        params.lambda * 0.5 * params.l * grad_q_norm_sq(sp, &state.q),
        params.lambda * bulk_energy(&state.q, params),
    )
}

/// `|grad u|^2` by Parseval.
pub fn grad_u_norm_sq(sp: &Spectral, u: &VelocityField) -> f64 {
    let (a, b) = sp.forward_pair(&u.u1, &u.u2).expect("u lives on this grid");
    sp.grad_norm_sq(&a) + sp.grad_norm_sq(&b)
}

/// `|u|_{H^1} = (|u|^2 + |grad u|^2)^(1/2)`.
pub fn velocity_h1(sp: &Spectral, u: &VelocityField) -> f64 {
    (u.inner(u) + grad_u_norm_sq(sp, u)).sqrt()
}

/// `A = |grad u|^2 + lambda |H(Q)|^2`.
pub fn higher_energy_a(sp: &Spectral, state: &SimState, params: &Parameters) -> f64 {
    let h = molecular_field(sp, &state.q, params);
    grad_u_norm_sq(sp, &state.u) + params.lambda * h.inner(&h)
}

fn weighted_a(sp: &Spectral, state: &SimState, params: &Parameters) -> f64 {
    let h = molecular_field(sp, &state.q, params);
    grad_u_norm_sq(sp, &state.u) + params.lambda / params.l * h.inner(&h)
}

/// `(sum (1 + 4 pi^2 |k|^2)^2 |(Q - R)^|^2)^(1/2)` with the Frobenius pairing.
pub fn q_distance_h2(sp: &Spectral, q: &QTensorField, reference: &QTensorField) -> Result<f64> {
    q.grid().check_same(&reference.grid())?;
    let d = q.axpy(-1.0, reference);
    let (ph, qh) = sp.forward_pair(&d.p, &d.q)?;
    let s: f64 = sp
        .wavevectors()
        .map(|(slot, k1, k2)| {
            let w = 1.0 + 4.0 * PI * PI * (k1 * k1 + k2 * k2) as f64;
            w * w * (ph.coeffs[slot].norm_sqr() + qh.coeffs[slot].norm_sqr())
        })
        .sum();
    Ok((2.0 * s).sqrt())
}

/// `|Q - R|_{H^1}` with the Frobenius pairing.
pub fn q_distance_h1(sp: &Spectral, q: &QTensorField, reference: &QTensorField) -> Result<f64> {
    q.grid().check_same(&reference.grid())?;
    let d = q.axpy(-1.0, reference);
    Ok((d.inner(&d) + grad_q_norm_sq(sp, &d)).sqrt())
}

/// Builds [`DiagnosticsRow`]s and keeps the previous sample for the
/// one-sided energy residual.
#[derive(Debug, Clone)]
pub struct RowSampler {
    sp: Spectral,
    params: Parameters,
    reference: Option<QTensorField>,
    previous: Option<(f64, f64, f64)>,
}

impl RowSampler {
    pub fn new(sp: Spectral, params: Parameters, reference: Option<QTensorField>) -> Self {
        Self {
            sp,
            params,
            reference,
            previous: None,
        }
    }

    pub fn sample(&mut self, state: &SimState) -> Result<DiagnosticsRow> {
        let sp = &self.sp;
        let params = &self.params;
        sp.grid().check_same(&state.grid())?;
        let energy = total_energy(sp, state, params);
        let (a, b) = sp.forward_pair(&state.u.u1, &state.u.u2)?;
        let grad_u = sp.grad_norm_sq(&a) + sp.grad_norm_sq(&b);
        let h = molecular_field(sp, &state.q, params);
        let h2 = h.inner(&h);
        let big_a = grad_u + params.lambda * h2;
        let distance = match &self.reference {
            Some(r) => q_distance_h2(sp, &state.q, r)?,
            None => f64::NAN,
        };
        let dissipation = params.nu * grad_u + params.lambda * params.gamma * h2;
        let residual = match self.previous {
            Some((t0, e0, d0)) if state.t > t0 => (energy.total - e0) / (state.t - t0) + 0.5 * (dissipation + d0),
            _ => f64::NAN,
        };
        self.previous = Some((state.t, energy.total, dissipation));
        let row = DiagnosticsRow {
            t: state.t,
            E_total: energy.total,
            E_kinetic: energy.kinetic,
            E_elastic: energy.elastic,
            E_bulk: energy.bulk,
            grad_u_L2sq: grad_u,
            H_L2sq: h2,
            A: big_a,
            B: E + (E + big_a).ln(),
            div_u_max: sp.divergence_max(&a, &b),
            Q_Linf: state.q.norm_linf(),
            u_H1: (state.u.inner(&state.u) + grad_u).sqrt(),
            Q_minus_Qinf_H2: distance,
            energy_residual: residual,
        };
        if row.values().iter().take(12).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { term: "diagnostics row" });
        }
        Ok(row)
    }
}

/// One point of an energy history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub t: f64,
    pub energy: f64,
    /// `nu |grad u|^2 + lambda Gamma |H|^2` at `t`.
    pub dissipation: f64,
}

impl EnergySample {
    pub fn from_row(row: &DiagnosticsRow, params: &Parameters) -> Self {
        Self {
            t: row.t,
            energy: row.E_total,
            dissipation: row.dissipation(params),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLawResidual {
    /// Interior sample times.
    pub times: Vec<f64>,
    /// `(E(t+) - E(t-)) / (2 dt) + D(t)`.
    pub residual: Vec<f64>,
    /// `|r| / D` pointwise, zero where both vanish.
    pub relative: Vec<f64>,
    pub max_relative: f64,
}

/// Centered-difference residual of the energy law over a uniformly sampled
/// history.
pub fn energy_law_residual(samples: &[EnergySample]) -> Result<EnergyLawResidual> {
    if samples.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: samples.len(),
        });
    }
    let dt = samples[1].t - samples[0].t;
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("sample times must increase, got step {dt}")));
    }
    for w in samples.windows(2) {
        let step = w[1].t - w[0].t;
        if (step - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling interval must be uniform: {step} vs {dt}"
            )));
        }
    }
    let mut out = EnergyLawResidual {
        times: Vec::with_capacity(samples.len() - 2),
        residual: Vec::with_capacity(samples.len() - 2),
        relative: Vec::with_capacity(samples.len() - 2),
        max_relative: 0.0,
    };
    for w in samples.windows(3) {
        let r = (w[2].energy - w[0].energy) / (2.0 * dt) + w[1].dissipation;
        let scale = w[1].dissipation.abs();
        let rel = if r == 0.0 { 0.0 } else { r.abs() / scale };
        out.times.push(w[1].t);
        out.residual.push(r);
        out.relative.push(rel);
        out.max_relative = out.max_relative.max(rel);
    }
    Ok(out)
}

/// Right-hand side terms `J1..J12` of the evolution identity for `A_L` and
/// the two dissipation terms `nu |Lap u|^2`, `lambda Gamma |grad H|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityTerms {
    pub j: [f64; 12],
    pub dissipation: [f64; 2],
}

impl IdentityTerms {
    pub fn sum(&self) -> f64 {
        self.j.iter().sum()
    }
}

type Vec2 = [Vec<f64>; 2];
type Mat = [[Vec<f64>; 2]; 2];

struct Calc<'a> {
    sp: &'a Spectral,
    h: f64,
}

impl Calc<'_> {
    fn d(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let ax = if axis == 0 { Axis::X1 } else { Axis::X2 };
        let fh = self.sp.forward(f).expect("grid");
        self.sp.inverse(&self.sp.derivative(&fh, ax, 1))
    }

    fn grad(&self, f: &[f64]) -> Vec2 {
        let fh = self.sp.forward(f).expect("grid");
        let (a, b) = self
            .sp
            .inverse_pair(&self.sp.derivative(&fh, Axis::X1, 1), &self.sp.derivative(&fh, Axis::X2, 1));
        [a, b]
    }

    fn lap(&self, f: &[f64]) -> Vec<f64> {
        let fh = self.sp.forward(f).expect("grid");
        self.sp.inverse(&self.sp.laplacian(&fh))
    }

    fn int(&self, f: impl Iterator<Item = f64>) -> f64 {
        self.h * f.sum::<f64>()
    }

    /// `int a b c`
    fn int3(&self, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        self.int(a.iter().zip(b).zip(c).map(|((x, y), z)| x * y * z))
    }
}

fn full(p: &[f64], q: &[f64]) -> Mat {
    let m: Vec<f64> = p.iter().map(|v| -v).collect();
    [[p.to_vec(), q.to_vec()], [q.to_vec(), m]]
}

fn frob(a: &QTensorField, b: &QTensorField) -> f64 {
    a.inner(b)
}

/// Evaluates `J1..J12` term by term from full 2x2 components, without the
/// `(p, q)` reductions used by the solver.
pub fn identity_terms(sp: &Spectral, state: &SimState, params: &Parameters) -> Result<IdentityTerms> {
    let grid = sp.grid();
    grid.check_same(&state.grid())?;
    let c = Calc {
        sp,
        h: grid.cell_area(),
    };
    let (lambda, l, xi, gamma, nu) = (params.lambda, params.l, params.xi, params.gamma, params.nu);
    let u: Vec2 = [state.u.u1.clone(), state.u.u2.clone()];
    let hq = molecular_field(sp, &state.q, params);
    let fq = bulk_force(&state.q, params);
    let qm = full(&state.q.p, &state.q.q);
    let hm = full(&hq.p, &hq.q);
    let fm = full(&fq.p, &fq.q);

    // gu[i][j] = d_j u_i, d2u[m][j][i] = d_m d_j u_i
    let gu: [Vec2; 2] = [c.grad(&u[0]), c.grad(&u[1])];
    let d2u: [[Vec2; 2]; 2] =
        std::array::from_fn(|m| std::array::from_fn(|j| std::array::from_fn(|i| c.d(&gu[i][j], m))));
    let lapu: Vec2 = [c.lap(&u[0]), c.lap(&u[1])];
    let dmat: Mat = std::array::from_fn(|i| {
        std::array::from_fn(|j| gu[i][j].iter().zip(&gu[j][i]).map(|(a, b)| 0.5 * (a + b)).collect())
    });
    // dd[l][i][k] = d_l D_ik
    let dd: [Mat; 2] = std::array::from_fn(|l| std::array::from_fn(|i| std::array::from_fn(|k| c.d(&dmat[i][k], l))));

    // dq[l][i][j] = d_l Q_ij, d2q[l][k][i][j] = d_l d_k Q_ij
    let dq: [Mat; 2] = std::array::from_fn(|l| std::array::from_fn(|i| std::array::from_fn(|j| c.d(&qm[i][j], l))));
    let d2q: [[Mat; 2]; 2] = std::array::from_fn(|l| {
        std::array::from_fn(|k| std::array::from_fn(|i| std::array::from_fn(|j| c.d(&dq[k][i][j], l))))
    });
    let lapq: Mat = std::array::from_fn(|i| std::array::from_fn(|j| c.lap(&qm[i][j])));
    let dh: [Mat; 2] = std::array::from_fn(|l| std::array::from_fn(|i| std::array::from_fn(|j| c.d(&hm[i][j], l))));
    let df: [Mat; 2] = std::array::from_fn(|k| std::array::from_fn(|i| std::array::from_fn(|j| c.d(&fm[i][j], k))));

    let r2 = 0..2usize;
    let idx2 = || r2.clone().flat_map(|a| r2.clone().map(move |b| (a, b)));
    let idx3 = || idx2().flat_map(|(a, b)| r2.clone().map(move |e| (a, b, e)));
    let idx4 = || idx2().flat_map(|(a, b)| idx2().map(move |(e, f)| (a, b, e, f)));

    let mut j = [0.0; 12];
    for (i, k) in idx2() {
        j[0] += c.int3(&u[k], &gu[i][k], &lapu[i]);
    }
    for (l, k, i, jj) in idx4() {
        j[1] += c.int3(&gu[k][l], &d2q[l][k][i][jj], &hm[i][jj]);
    }
    j[1] *= -2.0 * lambda;
    for (k, i, jj) in idx3() {
        j[2] += c.int3(&u[k], &df[k][i][jj], &hm[i][jj]);
    }
    j[2] *= lambda / l;
    for (i, jj, k, ll) in idx4() {
        j[3] += c.int3(&gu[i][jj], &dq[ll][k][jj], &dh[ll][i][k]) - c.int3(&gu[i][jj], &dq[ll][i][k], &dh[ll][k][jj]);
    }
    j[3] *= -2.0 * lambda;
    for (i, jj, k) in idx3() {
        j[4] += c.int3(&gu[i][jj], &lapq[k][jj], &hm[i][k]) - c.int3(&gu[i][jj], &lapq[i][k], &hm[k][jj]);
    }
    j[4] *= -lambda;
    {
        for (i, jj, k) in idx3() {
            j[5] += c.int3(&dmat[i][k], &lapq[k][jj], &hm[i][jj]) + c.int3(&lapq[i][k], &dmat[k][jj], &hm[i][jj]);
        }
        j[5] *= lambda * xi;
        for (i, jj, k, ll) in idx4() {
            j[6] += c.int3(&dd[ll][i][k], &dq[ll][k][jj], &hm[i][jj]);
        }
        j[6] *= 4.0 * lambda * xi;
        for (k, ll, jj, i) in idx4() {
            let prod: Vec<f64> = qm[k][ll].iter().zip(&qm[jj][i]).map(|(a, b)| a * b).collect();
            j[7] += c.int3(&c.lap(&prod), &gu[i][jj], &hm[k][ll]);
            let gp = c.grad(&prod);
            for m in 0..2 {
                j[8] += c.int3(&gp[m], &d2u[m][jj][i], &hm[k][ll]);
            }
        }
        j[7] *= -2.0 * lambda * xi;
        j[8] *= -4.0 * lambda * xi;
    }

    let gq = crate::coupling::q_gradient(sp, &state.q);
    let adv = crate::coupling::advect_pointwise(&state.u, &gq);
    j[9] = -lambda / l * frob(&linearized_f(&state.q, &adv, params), &hq);
    let vg = velocity_gradient(sp, &state.u);
    let (s, _) = stretching_pointwise(&vg, &state.q, params)?;
    j[10] = lambda / l * frob(&linearized_f(&state.q, &s, params), &hq);
    j[11] = lambda / l * gamma * frob(&linearized_f(&state.q, &hq, params), &hq);

    let diss_u = nu * c.int(lapu.iter().flat_map(|v| v.iter().map(|x| x * x)));
    let mut grad_h = 0.0;
    for (ll, i, jj) in idx3() {
        grad_h += c.int(dh[ll][i][jj].iter().map(|x| x * x));
    }
    let terms = IdentityTerms {
        j,
        dissipation: [diss_u, lambda * gamma * grad_h],
    };
    if terms.j.iter().chain(&terms.dissipation).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { term: "identity terms" });
    }
    Ok(terms)
}

/// Classical RK4 step of the semi-discrete system; `h` may be negative.
fn probe_step(sp: &Spectral, s: &SimState, h: f64, params: &Parameters) -> Result<SimState> {
    let f = |st: &SimState| -> Result<(VelocityField, QTensorField)> {
        let r = rhs(sp, st, params)?;
        Ok((r.du(), r.dq()))
    };
    let shift = |k: &(VelocityField, QTensorField), c: f64| SimState {
        t: s.t + c,
        u: s.u.axpy(c, &k.0),
        q: s.q.axpy(c, &k.1),
    };
    let k1 = f(s)?;
    let k2 = f(&shift(&k1, 0.5 * h))?;
    let k3 = f(&shift(&k2, 0.5 * h))?;
    let k4 = f(&shift(&k3, h))?;
    let w = h / 6.0;
    let next = SimState {
        t: s.t + h,
        u: s.u.axpy(w, &k1.0).axpy(2.0 * w, &k2.0).axpy(2.0 * w, &k3.0).axpy(w, &k4.0),
        q: s.q.axpy(w, &k1.1).axpy(2.0 * w, &k2.1).axpy(2.0 * w, &k3.1).axpy(w, &k4.1),
    };
    let umax = max_abs(&next.u.u1).max(max_abs(&next.u.u2));
    let qmax = max_abs(&next.q.p).max(max_abs(&next.q.q));
    for (quantity, value) in [("probe |u|_inf", umax), ("probe |Q|_inf", qmax)] {
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResidual {
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs - rhs| / (1 + |rhs|)`.
    pub residual: f64,
}

/// Checks the identity at `state`. `dA_L/dt` is the centered difference of
/// one forward and one backward RK4 probe step of size `dt_probe`; the
/// right-hand side and dissipation are evaluated at `state` itself.
pub fn identity_residual(
    sp: &Spectral,
    state: &SimState,
    params: &Parameters,
    dt_probe: f64,
) -> Result<IdentityResidual> {
    if !(dt_probe > 0.0 && dt_probe.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt_probe must be positive, got {dt_probe}")));
    }
    let ahead = probe_step(sp, state, dt_probe, params)?;
    let behind = probe_step(sp, state, -dt_probe, params)?;
    let rate = (weighted_a(sp, &ahead, params) - weighted_a(sp, &behind, params)) / (2.0 * dt_probe);
    let terms = identity_terms(sp, state, params)?;
    let lhs = 0.5 * rate + terms.dissipation[0] + terms.dissipation[1];
    let rhs = terms.sum();
    Ok(IdentityResidual {
        lhs,
        rhs,
        residual: (lhs - rhs).abs() / (1.0 + rhs.abs()),
    })
}

/// True iff `|u|_{H^1} <= tol_u` and `|H(Q)| <= tol_h`.
pub fn omega_limit_check(sp: &Spectral, state: &SimState, params: &Parameters, tol_u: f64, tol_h: f64) -> Result<bool> {
    if !(tol_u > 0.0 && tol_h > 0.0) {
        return Err(Error::InvalidParameter("tolerances must be positive".into()));
    }
    let h = molecular_field(sp, &state.q, params);
    Ok(velocity_h1(sp, &state.u) <= tol_u && h.norm_l2() <= tol_h)
}

/// `max |f_B''(Q)|` over the field: the Hessian of the bulk density in the
/// Frobenius metric has eigenvalues `a + c tr(Q^2)` and `a + 3 c tr(Q^2)`.
pub fn bulk_hessian_bound(q: &QTensorField, params: &Parameters) -> f64 {
    tr_q2(q)
        .into_iter()
        .map(|t| (params.a + params.c * t).abs().max((params.a + 3.0 * params.c * t).abs()))
        .fold(0.0, f64::max)
}

/// `mu = 2 + 2 lambda C2`, the smallest weight making `Y` coercive.
pub fn lyapunov_mu(params: &Parameters, c2: f64) -> f64 {
    2.0 + 2.0 * params.lambda * c2
}

/// ```text
/// Y = 1/2 |u|^2 + (lambda L / 2) |grad(Q - Qinf)|^2 + (mu / 2) |Q - Qinf|^2
///     + lambda int f_B(Q) - f_B(Qinf) - f_B'(Qinf) : (Q - Qinf)
/// ```
pub fn lyapunov_y(
    sp: &Spectral,
    state: &SimState,
    qinf: &QTensorField,
    mu: f64,
    params: &Parameters,
) -> Result<f64> {
    state.grid().check_same(&qinf.grid())?;
    let hinf = molecular_field(sp, qinf, params);
    let res = hinf.norm_l2();
    if !(res <= EQUILIBRIUM_TOL) {
        return Err(Error::NotEquilibrium(res));
    }
    let d = state.q.axpy(-1.0, qinf);
    let fb = bulk_density(&state.q, params);
    let fb_inf = bulk_density(qinf, params);
    // f_B'(Qinf) = -F(Qinf)
    let slope = bulk_force(qinf, params);
    let remainder: f64 = state.grid().cell_area() * fb.iter().zip(&fb_inf).map(|(a, b)| a - b).sum::<f64>()
        + slope.inner(&d);
    Ok(0.5 * state.u.inner(&state.u)
        + 0.5 * params.lambda * params.l * grad_q_norm_sq(sp, &d)
        + 0.5 * mu * d.inner(&d)
        + params.lambda * remainder)
}

/// Index of the first row with `u_H1 <= tol_u` and `|H| <= tol_h`.
pub fn decay_regime_start(rows: &[DiagnosticsRow], tol_u: f64, tol_h: f64) -> Option<usize> {
    rows.iter().position(|r| r.u_H1 <= tol_u && r.H_L2sq.sqrt() <= tol_h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    Polynomial,
    Exponential,
}

/// How the fitted series relates to the decaying norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Norm,
    /// `y = norm^2`, e.g. `A`; fitted exponents are halved.
    SquaredNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub samples: usize,
    /// `d log(norm) / d log(1 + t)`.
    pub poly_slope: f64,
    /// `s / (2 s - 1)` for the slope `s`.
    pub theta_hat: f64,
    /// `theta_hat` outside `(0, 1/2)`; reported, never clamped.
    pub out_of_theory: bool,
    /// `-d log(norm) / dt`.
    pub exp_rate: f64,
    /// RMS residuals of the two log-space fits.
    pub poly_residual: f64,
    pub exp_residual: f64,
    pub preferred: RateModel,
}

/// Least squares `y = alpha + beta x`; returns `(beta, rms residual)`.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let beta = sxy / sxx;
    let alpha = my - beta * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - alpha - beta * a).powi(2)).sum();
    (beta, (rss / n).sqrt())
}

/// Fits `log y` against `log(1 + t)` and against `t` and reports both.
pub fn fit_convergence_rate(t: &[f64], y: &[f64], kind: SeriesKind) -> Result<RateFit> {
    if t.len() != y.len() {
        return Err(Error::InvalidParameter(format!(
            "series lengths differ: {} times, {} values",
            t.len(),
            y.len()
        )));
    }
    if t.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            got: t.len(),
        });
    }
    if let Some(v) = y.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::FitRefused(format!("series must be positive and finite, found {v}")));
    }
    if t.iter().any(|v| !(v.is_finite() && *v > -1.0)) || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::FitRefused("times must be finite, increasing and > -1".into()));
    }
    let scale = match kind {
        SeriesKind::Norm => 1.0,
        SeriesKind::SquaredNorm => 0.5,
    };
    let ly: Vec<f64> = y.iter().map(|v| v.ln() * scale).collect();
    let lt: Vec<f64> = t.iter().map(|v| v.ln_1p()).collect();
    let (slope, poly_residual) = line_fit(&lt, &ly);
    let (exp_slope, exp_residual) = line_fit(t, &ly);
    if !(slope < 0.0 && exp_slope < 0.0) {
        return Err(Error::FitRefused(format!(
            "series is not decaying (log-log slope {slope}, log-linear slope {exp_slope})"
        )));
    }
    let theta_hat = slope / (2.0 * slope - 1.0);
    Ok(RateFit {
        samples: t.len(),
        poly_slope: slope,
        theta_hat,
        out_of_theory: !(theta_hat > 0.0 && theta_hat < 0.5),
        exp_rate: -exp_slope,
        poly_residual,
        exp_residual,
        preferred: if poly_residual <= exp_residual {
            RateModel::Polynomial
        } else {
            RateModel::Exponential
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Grid;
    use crate::init::{random_q, random_smooth_velocity, taylor_green};

    fn sp(n: usize) -> Spectral {
        Spectral::new(Grid::new(n).unwrap())
    }

    fn equilibrium(sp: &Spectral, params: &Parameters) -> SimState {
        let g = sp.grid();
        let q = QTensorField::constant(g, params.equilibrium_s2().sqrt(), 0.0);
        SimState::new(0.0, VelocityField::zeros(g), q).unwrap()
    }

    fn random_state(sp: &Spectral, seed: u64) -> SimState {
        SimState::new(
            0.0,
            random_smooth_velocity(sp, seed, 2.0, 3, 0.4),
            random_q(sp, seed, 2.0, 3, 0.5),
        )
        .unwrap()
    }

    #[test]
    fn columns_follow_field_order() {
        let row = DiagnosticsRow::from_values(std::array::from_fn(|i| i as f64));
        let json = serde_json::to_string(&row).unwrap();
        let mut last = 0;
        for name in DiagnosticsRow::COLUMNS {
            let at = json.find(&format!("\"{name}\":")).unwrap();
            assert!(at >= last, "{name} out of order");
            last = at;
        }
        assert_eq!(DiagnosticsRow::from_values(row.values()), row);
    }

    #[test]
    fn taylor_green_energies() {
        let s = sp(16);
        let g = s.grid();
        let params = Parameters { a: 0.0, ..Parameters::default() };
        let state = SimState::new(0.0, taylor_green(g, 1.0), QTensorField::zeros(g)).unwrap();
        let e = total_energy(&s, &state, &params);
        assert!((e.kinetic - 0.25).abs() < 1e-14);
        assert_eq!(e.elastic, 0.0);
        // two modes per component, |k|^2 = 2, |u|^2 = 1/2
        let expected = 4.0 * PI * PI * 2.0 * 0.5;
        assert!((grad_u_norm_sq(&s, &state.u) - expected).abs() < 1e-11 * expected);
        assert!((higher_energy_a(&s, &state, &params) - expected).abs() < 1e-11 * expected);
        assert!((velocity_h1(&s, &state.u) - (0.5 + expected).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn a_is_linear_in_lambda_through_h_only() {
        let s = sp(16);
        let state = random_state(&s, 5);
        let p1 = Parameters::default();
        let p2 = Parameters { lambda: 2.0, ..p1 };
        let gu = grad_u_norm_sq(&s, &state.u);
        let a1 = higher_energy_a(&s, &state, &p1);
        let a2 = higher_energy_a(&s, &state, &p2);
        assert!(((a2 - gu) - 2.0 * (a1 - gu)).abs() < 1e-12 * a2);
    }

    #[test]
    fn steady_state_quantities_vanish() {
        let s = sp(16);
        let params = Parameters::default();
        let eq = equilibrium(&s, &params);
        assert!(higher_energy_a(&s, &eq, &params) < 1e-28);
        let terms = identity_terms(&s, &eq, &params).unwrap();
        assert!(terms.j.iter().chain(&terms.dissipation).all(|v| v.abs() < 1e-14));
        let r = identity_residual(&s, &eq, &params, 1e-4).unwrap();
        assert!(r.residual <= 1e-10);
        assert!(omega_limit_check(&s, &eq, &params, 1e-12, 1e-12).unwrap());
        let y = lyapunov_y(&s, &eq, &eq.q, lyapunov_mu(&params, 1.0), &params).unwrap();
        assert_eq!(y, 0.0);
    }

    #[test]
    fn omega_limit_rejects_fresh_data() {
        let s = sp(16);
        let params = Parameters::default();
        let state = random_state(&s, 2);
        assert!(!omega_limit_check(&s, &state, &params, 1e-6, 1e-6).unwrap());
        assert!(omega_limit_check(&s, &state, &params, 0.0, 1.0).is_err());
    }

    #[test]
    fn lyapunov_requires_equilibrium() {
        let s = sp(16);
        let params = Parameters::default();
        let state = random_state(&s, 3);
        let err = lyapunov_y(&s, &state, &state.q, 3.0, &params).unwrap_err();
        assert!(matches!(err, Error::NotEquilibrium(_)));
    }

    #[test]
    fn lyapunov_is_nonnegative_near_equilibrium() {
        let s = sp(16);
        let params = Parameters::default();
        let eq = equilibrium(&s, &params);
        let state = SimState::new(
            0.0,
            random_smooth_velocity(&s, 4, 2.0, 3, 0.1),
            eq.q.axpy(1.0, &random_q(&s, 4, 2.0, 3, 0.3)),
        )
        .unwrap();
        let mu = lyapunov_mu(&params, bulk_hessian_bound(&state.q, &params));
        assert!(lyapunov_y(&s, &state, &eq.q, mu, &params).unwrap() > 0.0);
    }

    #[test]
    fn hessian_bound_at_minimiser() {
        let g = Grid::new(8).unwrap();
        let params = Parameters::default();
        let q = QTensorField::constant(g, params.equilibrium_s2().sqrt(), 0.0);
        // tr(Q^2) = -a/c: eigenvalues 0 and -2a
        assert!((bulk_hessian_bound(&q, &params) - 2.0).abs() < 1e-14);
        assert_eq!(lyapunov_mu(&params, 2.0), 6.0);
    }

    fn samples(t: &[f64], e: impl Fn(f64) -> f64, d: impl Fn(f64) -> f64) -> Vec<EnergySample> {
        t.iter()
            .map(|&t| EnergySample {
                t,
                energy: e(t),
                dissipation: d(t),
            })
            .collect()
    }

    #[test]
    fn energy_law_of_exact_history() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        // E = -t^2 has dE/dt = -2t exactly under centred differences
        let law = energy_law_residual(&samples(&t, |t| -t * t, |t| 2.0 * t)).unwrap();
        assert_eq!(law.times.len(), 48);
        assert!(law.max_relative < 1e-10);
        let steady = energy_law_residual(&samples(&t, |_| 1.0, |_| 0.0)).unwrap();
        assert_eq!(steady.max_relative, 0.0);
    }

    #[test]
    fn energy_law_needs_uniform_samples() {
        let short = samples(&[0.0, 1.0], |_| 1.0, |_| 0.0);
        assert!(matches!(
            energy_law_residual(&short),
            Err(Error::InsufficientSamples { needed: 3, got: 2 })
        ));
        let uneven = samples(&[0.0, 1.0, 3.0], |_| 1.0, |_| 0.0);
        assert!(energy_law_residual(&uneven).is_err());
    }

    #[test]
    fn sampler_residual_is_one_sided() {
        let s = sp(16);
        let params = Parameters::default();
        let mut sampler = RowSampler::new(s.clone(), params, None);
        let mut state = equilibrium(&s, &params);
        let first = sampler.sample(&state).unwrap();
        assert!(first.energy_residual.is_nan() && first.Q_minus_Qinf_H2.is_nan());
        state.t = 0.5;
        let second = sampler.sample(&state).unwrap();
        assert!(second.energy_residual.abs() < 1e-14);
        let mut with_ref = RowSampler::new(s.clone(), params, Some(state.q.clone()));
        assert_eq!(with_ref.sample(&state).unwrap().Q_minus_Qinf_H2, 0.0);
    }

    #[test]
    fn distances_vanish_on_reference_and_order() {
        let s = sp(16);
        let a = random_q(&s, 1, 2.0, 3, 0.5);
        let b = random_q(&s, 2, 2.0, 3, 0.5);
        assert_eq!(q_distance_h2(&s, &a, &a).unwrap(), 0.0);
        assert!(q_distance_h1(&s, &a, &b).unwrap() <= q_distance_h2(&s, &a, &b).unwrap());
    }

    #[test]
    fn decay_regime_start_finds_first_row() {
        let row = |u: f64, h: f64| {
            let mut v = [0.0; 14];
            v[11] = u;
            v[6] = h * h;
            DiagnosticsRow::from_values(v)
        };
        let rows = [row(1.0, 1.0), row(1e-3, 1.0), row(1e-3, 1e-3), row(1.0, 1e-3)];
        assert_eq!(decay_regime_start(&rows, 1e-2, 1e-2), Some(2));
        assert_eq!(decay_regime_start(&rows[..2], 1e-2, 1e-2), None);
    }

    fn grid_times() -> Vec<f64> {
        (0..100).map(|i| i as f64 * 0.5).collect()
    }

    #[test]
    fn polynomial_series_gives_one_third() {
        let t = grid_times();
        let y: Vec<f64> = t.iter().map(|v| 3.0 / (1.0 + v)).collect();
        let fit = fit_convergence_rate(&t, &y, SeriesKind::Norm).unwrap();
        assert!((fit.poly_slope + 1.0).abs() < 1e-12);
        assert!((fit.theta_hat - 1.0 / 3.0).abs() < 1e-12);
        assert!(!fit.out_of_theory);
        assert_eq!(fit.preferred, RateModel::Polynomial);
    }

    #[test]
    fn exponential_series_gives_rate() {
        let t = grid_times();
        let y: Vec<f64> = t.iter().map(|v| (-0.7 * v).exp()).collect();
        let fit = fit_convergence_rate(&t, &y, SeriesKind::Norm).unwrap();
        assert!((fit.exp_rate - 0.7).abs() < 1e-12);
        assert_eq!(fit.preferred, RateModel::Exponential);
        let sq: Vec<f64> = y.iter().map(|v| v * v).collect();
        let fit2 = fit_convergence_rate(&t, &sq, SeriesKind::SquaredNorm).unwrap();
        assert!((fit2.exp_rate - 0.7).abs() < 1e-12);
    }

    #[test]
    fn steep_polynomial_is_flagged_not_clamped() {
        let t = grid_times();
        // slope -1/4 gives theta = 1/6; slope -3 gives 3/7, inside; slope 0.5 refused
        let y: Vec<f64> = t.iter().map(|v| (1.0 + v).powf(-0.25)).collect();
        let fit = fit_convergence_rate(&t, &y, SeriesKind::Norm).unwrap();
        assert!((fit.theta_hat - 1.0 / 6.0).abs() < 1e-12);
        let y: Vec<f64> = t.iter().map(|v| (1.0 + v).powf(-3.0)).collect();
        let fit = fit_convergence_rate(&t, &y, SeriesKind::Norm).unwrap();
        assert!((fit.theta_hat - 3.0 / 7.0).abs() < 1e-12);
        assert!(fit.theta_hat < 0.5 && !fit.out_of_theory);
    }

    #[test]
    fn fit_refusals() {
        let t = grid_times();
        let growing: Vec<f64> = t.iter().map(|v| 1.0 + v).collect();
        assert!(matches!(fit_convergence_rate(&t, &growing, SeriesKind::Norm), Err(Error::FitRefused(_))));
        let mut zero: Vec<f64> = t.iter().map(|v| (-v).exp()).collect();
        zero[10] = 0.0;
        assert!(matches!(fit_convergence_rate(&t, &zero, SeriesKind::Norm), Err(Error::FitRefused(_))));
        assert!(matches!(
            fit_convergence_rate(&t[..5], &growing[..5], SeriesKind::Norm),
            Err(Error::InsufficientSamples { needed: 20, got: 5 })
        ));
        assert!(fit_convergence_rate(&t, &growing[..50], SeriesKind::Norm).is_err());
    }

    #[test]
    fn xi_zero_kills_stretching_terms() {
        let s = sp(16);
        let params = Parameters { xi: 0.0, ..Parameters::default() };
        let terms = identity_terms(&s, &random_state(&s, 8), &params).unwrap();
        assert!(terms.j[5..9].iter().all(|v| v.abs() <= 1e-12));
    }
}
