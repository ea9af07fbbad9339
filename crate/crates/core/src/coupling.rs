//! Fluid/order-parameter interaction terms.
//!
//! Index convention: `gradu[i][j] = d_j u_i`, divergence of a tensor is
//! `(div T)_i = d_j T_ij`. Nonlinear products are formed pointwise from
//! spectrally exact derivatives and then truncated by the 2/3 rule.
//!
//! For `Q = [[p, q], [q, -p]]`, `H = [[hp, hq], [hq, -hp]]` the stresses
//! reduce to
//!
//! ```text
//! tau   = -xi H + 2 xi tr(QH) Q - L gradQ (.) gradQ,   tr(QH) = 2 (p hp + q hq)
//! sigma = QH - HQ,   sigma_12 = -sigma_21 = 2 (p hq - q hp),  sigma_11 = sigma_22 = 0
//! ```
//!
//! using `QH + HQ = tr(QH) I` for symmetric traceless 2x2 matrices.

use crate::energetics::molecular_field;
use crate::error::{Error, Result};
use crate::fields::{Grid, Mat2, Parameters, QTensorField, VelocityField};
use crate::spectral::{Axis, Spectral};

/// General (not necessarily symmetric) 2x2 tensor field.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2Field {
    grid: Grid,
    pub t11: Vec<f64>,
    pub t12: Vec<f64>,
    pub t21: Vec<f64>,
    pub t22: Vec<f64>,
}

impl Tensor2Field {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            t11: grid.zeros(),
            t12: grid.zeros(),
            t21: grid.zeros(),
            t22: grid.zeros(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn at(&self, k: usize) -> Mat2 {
        Mat2::new(self.t11[k], self.t12[k], self.t21[k], self.t22[k])
    }

    pub fn set(&mut self, k: usize, m: Mat2) {
        self.t11[k] = m.0[0][0];
        self.t12[k] = m.0[0][1];
        self.t21[k] = m.0[1][0];
        self.t22[k] = m.0[1][1];
    }

    pub fn add(&self, other: &Tensor2Field) -> Self {
        let zip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Self {
            grid: self.grid,
            t11: zip(&self.t11, &other.t11),
            t12: zip(&self.t12, &other.t12),
            t21: zip(&self.t21, &other.t21),
            t22: zip(&self.t22, &other.t22),
        }
    }

    /// Largest `|T_12 - T_21|`.
    pub fn asymmetry(&self) -> f64 {
        self.t12
            .iter()
            .zip(&self.t21)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|T + T^T|` entry.
    pub fn symmetric_part_max(&self) -> f64 {
        (0..self.t11.len())
            .map(|k| {
                let m = self.at(k);
                (m + m.transpose()).0.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()))
            })
            .fold(0.0, f64::max)
    }
}

/// `grad u`, its symmetric part `D` and skew part `Omega`.
#[derive(Debug, Clone)]
pub struct VelocityGradient {
    pub gradu: Tensor2Field,
    pub d: Tensor2Field,
    pub omega: Tensor2Field,
}

impl VelocityGradient {
    pub(crate) fn from_gradu(gradu: Tensor2Field) -> Self {
        let grid = gradu.grid();
        let mut d = Tensor2Field::zeros(grid);
        let mut omega = Tensor2Field::zeros(grid);
        for k in 0..grid.len() {
            let g = gradu.at(k);
            d.set(k, (g + g.transpose()).scale(0.5));
            omega.set(k, (g - g.transpose()).scale(0.5));
        }
        Self { gradu, d, omega }
    }

    pub fn max_abs(&self) -> f64 {
        [&self.gradu.t11, &self.gradu.t12, &self.gradu.t21, &self.gradu.t22]
            .into_iter()
            .flat_map(|v| v.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// First derivatives of `p` and `q`.
#[derive(Debug, Clone)]
pub struct QGradient {
    pub dp1: Vec<f64>,
    pub dp2: Vec<f64>,
    pub dq1: Vec<f64>,
    pub dq2: Vec<f64>,
}

pub fn velocity_gradient(sp: &Spectral, u: &VelocityField) -> VelocityGradient {
    let (a, b) = sp.forward_pair(&u.u1, &u.u2).expect("u lives on this grid");
    let (g11, g12) = sp.inverse_pair(&sp.derivative(&a, Axis::X1, 1), &sp.derivative(&a, Axis::X2, 1));
    let (g21, g22) = sp.inverse_pair(&sp.derivative(&b, Axis::X1, 1), &sp.derivative(&b, Axis::X2, 1));
    VelocityGradient::from_gradu(Tensor2Field {
        grid: u.grid(),
        t11: g11,
        t12: g12,
        t21: g21,
        t22: g22,
    })
}

pub fn q_gradient(sp: &Spectral, q: &QTensorField) -> QGradient {
    let (ph, qh) = sp.forward_pair(&q.p, &q.q).expect("Q lives on this grid");
    let (dp1, dp2) = sp.inverse_pair(&sp.derivative(&ph, Axis::X1, 1), &sp.derivative(&ph, Axis::X2, 1));
    let (dq1, dq2) = sp.inverse_pair(&sp.derivative(&qh, Axis::X1, 1), &sp.derivative(&qh, Axis::X2, 1));
    QGradient { dp1, dp2, dq1, dq2 }
}

/// Pre-reduction tolerance of the symmetric/traceless check on `S`,
/// relative to `max(1, |grad u|_inf)`.
pub const STRETCHING_S0_TOL: f64 = 1e-8;

/// Pointwise `S(grad u, Q)` without truncation. Returns the field and the
/// largest pre-reduction defect from symmetric-traceless.
pub(crate) fn stretching_pointwise(
    vg: &VelocityGradient,
    q: &QTensorField,
    params: &Parameters,
) -> Result<(QTensorField, f64)> {
    let grid = q.grid();
    grid.check_same(&vg.gradu.grid())?;
    let xi = params.xi;
    let half_i = Mat2::IDENTITY.scale(0.5);
    let mut out = QTensorField::zeros(grid);
    let mut defect: f64 = 0.0;
    for k in 0..grid.len() {
        let qm = Mat2::from_pq(q.p[k], q.q[k]);
        let m = qm + half_i;
        let d = vg.d.at(k);
        let w = vg.omega.at(k);
        let trq_gradu = (qm * vg.gradu.at(k)).trace();
        let s = (d.scale(xi) + w) * m + m * (d.scale(xi) - w) - m.scale(2.0 * xi * trq_gradu);
        defect = defect.max(s.s0_defect());
        let (sp_, sq) = s.to_pq();
        out.p[k] = sp_;
        out.q[k] = sq;
    }
    let scale = vg.max_abs().max(1.0);
    if defect > STRETCHING_S0_TOL * scale {
        return Err(Error::Consistency(format!(
            "stretching tensor left S0 by {defect:e} (|grad u| = {scale:e})"
        )));
    }
    Ok((out, defect))
}

/// `S = (xi D + Omega)(Q + I/2) + (Q + I/2)(xi D - Omega) - 2 xi (Q + I/2) tr(Q grad u)`,
/// dealiased.
pub fn stretching(
    sp: &Spectral,
    vg: &VelocityGradient,
    q: &QTensorField,
    params: &Parameters,
) -> Result<QTensorField> {
    let (s, _) = stretching_pointwise(vg, q, params)?;
    Ok(dealias_q(sp, &s))
}

/// Symmetric stress from precomputed `grad Q`.
pub(crate) fn stress_tau_with(
    q: &QTensorField,
    h: &QTensorField,
    dq: &QGradient,
    params: &Parameters,
) -> Tensor2Field {
    let grid = q.grid();
    let (xi, l) = (params.xi, params.l);
    let sign = if params.flip_tau_sign { -1.0 } else { 1.0 };
    let mut tau = Tensor2Field::zeros(grid);
    for k in 0..grid.len() {
        let (p, qq, hp, hq) = (q.p[k], q.q[k], h.p[k], h.q[k]);
        let trqh = 2.0 * (p * hp + qq * hq);
        // (gradQ (.) gradQ)_ij = 2 (d_i p d_j p + d_i q d_j q)
        let g11 = 2.0 * (dq.dp1[k] * dq.dp1[k] + dq.dq1[k] * dq.dq1[k]);
        let g12 = 2.0 * (dq.dp1[k] * dq.dp2[k] + dq.dq1[k] * dq.dq2[k]);
        let g22 = 2.0 * (dq.dp2[k] * dq.dp2[k] + dq.dq2[k] * dq.dq2[k]);
        let t11 = -xi * hp + 2.0 * xi * trqh * p - l * g11;
        let t12 = -xi * hq + 2.0 * xi * trqh * qq - l * g12;
        let t22 = xi * hp - 2.0 * xi * trqh * p - l * g22;
        tau.t11[k] = sign * t11;
        tau.t12[k] = sign * t12;
        tau.t21[k] = sign * t12;
        tau.t22[k] = sign * t22;
    }
    tau
}

/// `tau = -xi (Q + I/2) H - xi H (Q + I/2) + 2 xi (Q + I/2) tr(QH) - L gradQ (.) gradQ`.
pub fn stress_tau(sp: &Spectral, q: &QTensorField, h: &QTensorField, params: &Parameters) -> Tensor2Field {
    stress_tau_with(q, h, &q_gradient(sp, q), params)
}

/// `sigma = QH - HQ`.
pub fn stress_sigma(q: &QTensorField, h: &QTensorField) -> Tensor2Field {
    let grid = q.grid();
    let mut sigma = Tensor2Field::zeros(grid);
    for k in 0..grid.len() {
        let s12 = 2.0 * (q.p[k] * h.q[k] - q.q[k] * h.p[k]);
        sigma.t12[k] = s12;
        sigma.t21[k] = -s12;
    }
    sigma
}

/// `lambda div(T)` of a stress field, dealiased, as spectra.
pub(crate) fn stress_divergence_spectral(
    sp: &Spectral,
    total: &Tensor2Field,
    lambda: f64,
) -> (crate::spectral::SpectralField, crate::spectral::SpectralField) {
    let (a11, a12) = sp.forward_pair(&total.t11, &total.t12).expect("grid");
    let (a21, a22) = sp.forward_pair(&total.t21, &total.t22).expect("grid");
    let mut f1 = sp
        .derivative(&a11, Axis::X1, 1)
        .add(&sp.derivative(&a12, Axis::X2, 1))
        .scaled(lambda);
    let mut f2 = sp
        .derivative(&a21, Axis::X1, 1)
        .add(&sp.derivative(&a22, Axis::X2, 1))
        .scaled(lambda);
    sp.dealias_in_place(&mut f1);
    sp.dealias_in_place(&mut f2);
    (f1, f2)
}

/// `lambda div(tau + sigma)`, not projected.
pub fn elastic_force(sp: &Spectral, q: &QTensorField, params: &Parameters) -> VelocityField {
    let h = molecular_field(sp, q, params);
    let total = stress_tau(sp, q, &h, params).add(&stress_sigma(q, &h));
    let (f1, f2) = stress_divergence_spectral(sp, &total, params.lambda);
    let (u1, u2) = sp.inverse_pair(&f1, &f2);
    VelocityField::new(q.grid(), u1, u2).expect("grid")
}

pub(crate) fn advect_pointwise(u: &VelocityField, dq: &QGradient) -> QTensorField {
    let grid = u.grid();
    let mut out = QTensorField::zeros(grid);
    for k in 0..grid.len() {
        out.p[k] = u.u1[k] * dq.dp1[k] + u.u2[k] * dq.dp2[k];
        out.q[k] = u.u1[k] * dq.dq1[k] + u.u2[k] * dq.dq2[k];
    }
    out
}

/// `u . grad Q`, dealiased.
pub fn advect_q(sp: &Spectral, u: &VelocityField, q: &QTensorField) -> QTensorField {
    dealias_q(sp, &advect_pointwise(u, &q_gradient(sp, q)))
}

/// Pointwise `(u . grad) u`.
pub(crate) fn self_advection_pointwise(u: &VelocityField, vg: &VelocityGradient) -> VelocityField {
    let g = &vg.gradu;
    let grid = u.grid();
    let mut out = VelocityField::zeros(grid);
    for k in 0..grid.len() {
        out.u1[k] = u.u1[k] * g.t11[k] + u.u2[k] * g.t12[k];
        out.u2[k] = u.u1[k] * g.t21[k] + u.u2[k] * g.t22[k];
    }
    out
}

/// Pressure with zero mean from `-Lap P = div(u . grad u - lambda div(tau + sigma))`.
pub fn reconstruct_pressure(sp: &Spectral, u: &VelocityField, q: &QTensorField, params: &Parameters) -> Vec<f64> {
    let vg = velocity_gradient(sp, u);
    let adv = self_advection_pointwise(u, &vg);
    let force = elastic_force(sp, q, params);
    let n1: Vec<f64> = adv.u1.iter().zip(&force.u1).map(|(a, f)| a - f).collect();
    let n2: Vec<f64> = adv.u2.iter().zip(&force.u2).map(|(a, f)| a - f).collect();
    let (a, b) = sp.forward_pair(&n1, &n2).expect("grid");
    let mut div = sp.derivative(&a, Axis::X1, 1).add(&sp.derivative(&b, Axis::X2, 1));
    sp.dealias_in_place(&mut div);
    let mut pres = div.clone();
    for (slot, k1, k2) in sp.wavevectors() {
        let kk = (k1 * k1 + k2 * k2) as f64;
        pres.coeffs[slot] = if kk == 0.0 {
            num_complex::Complex64::new(0.0, 0.0)
        } else {
            div.coeffs[slot] / (4.0 * std::f64::consts::PI * std::f64::consts::PI * kk)
        };
    }
    sp.inverse(&pres)
}

pub(crate) fn dealias_q(sp: &Spectral, q: &QTensorField) -> QTensorField {
    let (mut a, mut b) = sp.forward_pair(&q.p, &q.q).expect("grid");
    sp.dealias_in_place(&mut a);
    sp.dealias_in_place(&mut b);
    let (p, qq) = sp.inverse_pair(&a, &b);
    QTensorField::new(q.grid(), p, qq).expect("grid")
}

/// `S(G, Q)` for a constant gradient `G` at one point, in `(p, q)` form.
fn stretch_point(g: Mat2, qm: Mat2, xi: f64) -> (f64, f64) {
    let m = qm + Mat2::IDENTITY.scale(0.5);
    let d = (g + g.transpose()).scale(0.5);
    let w = (g - g.transpose()).scale(0.5);
    let s = (d.scale(xi) + w) * m + m * (d.scale(xi) - w) - m.scale(2.0 * xi * (qm * g).trace());
    s.to_pq()
}

/// Largest squared Frobenius norm of `S(e_perp (x) e, Q)` over unit `e` and
/// grid points. For a plane wave along `e` this is the strength of the
/// explicit exchange between `u` and `Q`; the bound is exact when the three
/// component responses are aligned and otherwise an upper bound.
pub fn coupling_strength(q: &QTensorField, params: &Parameters) -> f64 {
    let g1 = Mat2::new(1.0, 0.0, 0.0, -1.0);
    let g2 = Mat2::new(0.0, 1.0, 1.0, 0.0);
    let g3 = Mat2::new(0.0, -1.0, 1.0, 0.0);
    let mut worst: f64 = 0.0;
    for k in 0..q.p.len() {
        let qm = Mat2::from_pq(q.p[k], q.q[k]);
        let a = stretch_point(g1, qm, params.xi);
        let b = stretch_point(g2, qm, params.xi);
        let c = stretch_point(g3, qm, params.xi);
        // largest singular value of the 2x2 matrix with columns a, b
        let (aa, bb, ab) = (a.0 * a.0 + a.1 * a.1, b.0 * b.0 + b.1 * b.1, a.0 * b.0 + a.1 * b.1);
        let half_tr = 0.5 * (aa + bb);
        let sigma = (half_tr + (0.25 * (aa - bb).powi(2) + ab * ab).sqrt()).sqrt();
        let r = sigma + c.0.hypot(c.1);
        // e_perp (x) e = (-sin 2t g1 + cos 2t g2 + g3) / 2, Frobenius weight 2
        worst = worst.max(0.5 * r * r);
    }
    worst
}

/// Step bound for the explicit `u`-`Q` exchange at the highest retained
/// wavenumber; infinite when viscous and elastic damping dominate it.
pub fn coupling_time_bound(sp: &Spectral, q: &QTensorField, params: &Parameters) -> f64 {
    let kc = sp.dealias_cutoff().floor();
    let kmax2 = 4.0 * std::f64::consts::PI.powi(2) * 2.0 * kc * kc;
    let c2 = coupling_strength(q, params);
    let growth = params.lambda * params.l * c2 - params.nu * params.gamma * params.l;
    if growth > 0.0 {
        (params.nu + params.gamma * params.l) / (kmax2 * growth)
    } else {
        f64::INFINITY
    }
}
