//! Landau-de Gennes free energy, molecular field and equilibrium relaxation.
//!
//! With `Q = [[p, q], [q, -p]]` and `s2 = p^2 + q^2`:
//!
//! ```text
//! f_B  = (a/2) tr(Q^2) + (c/4) tr(Q^2)^2 = a s2 + c s2^2
//! H    = L Lap(Q) - a Q - c Q tr(Q^2)
//! F(Q) = -a Q - c Q tr(Q^2)                (algebraic part of H)
//! ```
//!
//! Gradient energies use Parseval; bulk integrals use the rectangle rule.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{tr_q2, Parameters, QTensorField};
use crate::spectral::Spectral;

/// Split of the total energy `1/2 |u|^2 + lambda F(Q)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub elastic: f64,
    pub bulk: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(kinetic: f64, elastic: f64, bulk: f64) -> Self {
        Self {
            kinetic,
            elastic,
            bulk,
            total: kinetic + elastic + bulk,
        }
    }
}

/// Pointwise `f_B(Q) = a s2 + c s2^2`.
pub fn bulk_density(q: &QTensorField, params: &Parameters) -> Vec<f64> {
    q.p.iter()
        .zip(&q.q)
        .map(|(p, q)| {
            let s2 = p * p + q * q;
            params.a * s2 + params.c * s2 * s2
        })
        .collect()
}

/// `int |grad Q|^2 dx = 2 int |grad p|^2 + |grad q|^2 dx`.
pub fn grad_q_norm_sq(sp: &Spectral, q: &QTensorField) -> f64 {
    let (ph, qh) = sp.forward_pair(&q.p, &q.q).expect("Q lives on this grid");
    2.0 * (sp.grad_norm_sq(&ph) + sp.grad_norm_sq(&qh))
}

/// `int f_B(Q) dx`.
pub fn bulk_energy(q: &QTensorField, params: &Parameters) -> f64 {
    q.grid().cell_area() * bulk_density(q, params).iter().sum::<f64>()
}

/// `F(Q) = int (L/2) |grad Q|^2 + f_B(Q) dx`.
pub fn free_energy(sp: &Spectral, q: &QTensorField, params: &Parameters) -> f64 {
    0.5 * params.l * grad_q_norm_sq(sp, q) + bulk_energy(q, params)
}

/// The algebraic map `Q -> -a Q - c Q tr(Q^2)`.
pub fn bulk_force(q: &QTensorField, params: &Parameters) -> QTensorField {
    let (a, c) = (params.a, params.c);
    q.map(|p, q| {
        let k = -a - 2.0 * c * (p * p + q * q);
        (k * p, k * q)
    })
}

/// `H(Q) = L Lap(Q) + F(Q)`.
pub fn molecular_field(sp: &Spectral, q: &QTensorField, params: &Parameters) -> QTensorField {
    let (ph, qh) = sp.forward_pair(&q.p, &q.q).expect("Q lives on this grid");
    let (lp, lq) = sp.inverse_pair(&sp.laplacian(&ph), &sp.laplacian(&qh));
    let f = bulk_force(q, params);
    let l = params.l;
    QTensorField::new(
        q.grid(),
        lp.iter().zip(&f.p).map(|(d, b)| l * d + b).collect(),
        lq.iter().zip(&f.q).map(|(d, b)| l * d + b).collect(),
    )
    .expect("same grid")
}

/// Directional derivative of the algebraic map,
/// `dF(Q)[X] = -a X - c (tr(Q^2) X + 2 tr(QX) Q)`.
pub fn linearized_f(q: &QTensorField, x: &QTensorField, params: &Parameters) -> QTensorField {
    let (a, c) = (params.a, params.c);
    let mut out = QTensorField::zeros(q.grid());
    for i in 0..q.p.len() {
        let (p, qq) = (q.p[i], q.q[i]);
        let (xp, xq) = (x.p[i], x.q[i]);
        let trq2 = 2.0 * (p * p + qq * qq);
        let trqx = 2.0 * (p * xp + qq * xq);
        out.p[i] = -a * xp - c * (trq2 * xp + 2.0 * trqx * p);
        out.q[i] = -a * xq - c * (trq2 * xq + 2.0 * trqx * qq);
    }
    out
}

/// Constant `M` in `f_B >= -(M/2) tr(Q^2) + (c/8) tr(Q^2)^2`; any
/// `M >= -a` works when `b = 0`.
pub fn lower_bound_m(params: &Parameters) -> f64 {
    (-params.a).max(0.0)
}

/// `-lambda (M + 1)^2 / c * |T^2|`, a floor for the total energy.
pub fn energy_lower_bound(params: &Parameters) -> f64 {
    let m = lower_bound_m(params);
    -params.lambda * (m + 1.0) * (m + 1.0) / params.c
}

/// Stability bound `1 / (Gamma (|a| + 3 c max tr(Q^2)))` of the explicit bulk
/// reaction; infinite when the reaction vanishes.
pub fn reaction_time_bound(q: &QTensorField, params: &Parameters) -> f64 {
    let trmax = tr_q2(q).into_iter().fold(0.0, f64::max);
    let rate = params.gamma * (params.a.abs() + 3.0 * params.c * trmax);
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone)]
pub struct RelaxOutcome {
    pub q: QTensorField,
    /// `|H(Q)|_{L^2}` of the returned field.
    pub residual: f64,
    pub steps: usize,
    pub converged: bool,
    /// Free energy before the first step and after each step.
    pub energies: Vec<f64>,
}

/// Per-step energy slack tolerated by [`relax_to_equilibrium`].
pub const RELAX_ENERGY_SLACK: f64 = 1e-10;

/// Gradient flow `Q_t = Gamma H(Q)` with implicit `Gamma L Lap(Q)` and
/// explicit bulk reaction, at half the reaction stability bound.
///
/// Stops when `|H(Q)|_{L^2} <= tol` or after `max_steps`; not converging is
/// reported through [`RelaxOutcome::converged`]. A free-energy increase
/// beyond [`RELAX_ENERGY_SLACK`] is an error.
pub fn relax_to_equilibrium(
    sp: &Spectral,
    q0: &QTensorField,
    params: &Parameters,
    tol: f64,
    max_steps: usize,
) -> Result<RelaxOutcome> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("relaxation tol must be positive, got {tol}")));
    }
    sp.grid().check_same(&q0.grid())?;
    let mut q = q0.clone();
    let mut energy = free_energy(sp, &q, params);
    let mut energies = vec![energy];
    let mut residual = molecular_field(sp, &q, params).norm_l2();
    let mut steps = 0;
    const FALLBACK_STEP: f64 = 0.1;
    while residual > tol && steps < max_steps {
        let bound = reaction_time_bound(&q, params);
        let dtau = if bound.is_finite() {
            0.5 * bound
        } else {
            FALLBACK_STEP / params.gamma
        };
        let f = bulk_force(&q, params);
        let explicit = q.axpy(dtau * params.gamma, &f);
        let (ph, qh) = sp.forward_pair(&explicit.p, &explicit.q)?;
        let alpha = params.gamma * params.l * dtau;
        let (p, qq) = sp.inverse_pair(
            &sp.invert_helmholtz(&ph, alpha),
            &sp.invert_helmholtz(&qh, alpha),
        );
        let next = QTensorField::new(q.grid(), p, qq)?;
        if !next.is_finite() {
            return Err(Error::NonFinite { term: "relaxation iterate" });
        }
        let e_next = free_energy(sp, &next, params);
        steps += 1;
        if e_next > energy + RELAX_ENERGY_SLACK * energy.abs().max(1.0) {
            return Err(Error::EnergyIncrease {
                step: steps,
                before: energy,
                after: e_next,
            });
        }
        q = next;
        energy = e_next;
        energies.push(energy);
        residual = molecular_field(sp, &q, params).norm_l2();
    }
    Ok(RelaxOutcome {
        q,
        residual,
        steps,
        converged: residual <= tol,
        energies,
    })
}
