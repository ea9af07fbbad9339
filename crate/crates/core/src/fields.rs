//! Grid, field containers and pointwise tensor algebra.
//!
//! The order parameter is stored in the reduced form
//!
//! ```text
//! Q(x) = [[p, q], [q, -p]]
//! ```
//!
//! so symmetry and tracelessness hold by construction. In two dimensions the
//! cubic Landau-de Gennes coefficient `b` drops out entirely: `tr(Q^3) = 0`
//! and `Q^2 - tr(Q^2) I / 2 = 0` for every matrix of this form, so
//! [`Parameters`] has no `b` field.
//!
//! Storage is row-major `n x n`, value `(i, j)` sits at `x = (i / n, j / n)`
//! on the unit square.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// Uniform periodic grid on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidGrid(n));
        }
        Ok(Self { n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Area element of the rectangle rule.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dx()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    /// Physical coordinate of grid line `i` (same along both axes).
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.len()]
    }

    /// Samples `f(x1, x2)` at every grid point.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.n {
            for j in 0..self.n {
                out.push(f(self.coord(i), self.coord(j)));
            }
        }
        out
    }

    pub(crate) fn check_len(&self, data: &[f64]) -> Result<()> {
        if data.len() != self.len() {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                found: data.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        Ok(())
    }
}

/// Physical constants of the coupled system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parameters {
    /// Fluid viscosity.
    pub nu: f64,
    /// Kinetic/elastic energy ratio.
    pub lambda: f64,
    /// Relaxation (mobility) coefficient.
    pub gamma: f64,
    /// Elastic constant.
    pub l: f64,
    /// Quadratic bulk coefficient, any sign.
    pub a: f64,
    /// Quartic bulk coefficient, must be positive.
    pub c: f64,
    /// Tumbling/aligning ratio, any sign.
    pub xi: f64,
    /// Fault-injection hook: flips the sign of the symmetric stress.
    #[doc(hidden)]
    pub flip_tau_sign: bool,
}

impl Default for Parameters {
    fn default() -> Self {
        Self {
            nu: 1.0,
            lambda: 1.0,
            gamma: 1.0,
            l: 0.1,
            a: -1.0,
            c: 1.0,
            xi: 0.5,
            flip_tau_sign: false,
        }
    }
}

impl Parameters {
    /// Every violated invariant, in declaration order.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let positive = [
            ("nu", self.nu),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("L", self.l),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.a.is_finite() {
            errs.push(format!("a must be finite, got {}", self.a));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            errs.push(format!(
                "c must be positive (c > 0 keeps the bulk energy bounded from below), got {}",
                self.c
            ));
        }
        if !self.xi.is_finite() {
            errs.push(format!("xi must be finite, got {}", self.xi));
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

    /// `p^2 + q^2` of the uniform bulk minimiser (zero when `a >= 0`).
    pub fn equilibrium_s2(&self) -> f64 {
        if self.a < 0.0 {
            -self.a / (2.0 * self.c)
        } else {
            0.0
        }
    }
}

/// Dense 2x2 real matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn new(m11: f64, m12: f64, m21: f64, m22: f64) -> Self {
        Mat2([[m11, m12], [m21, m22]])
    }

    pub fn from_pq(p: f64, q: f64) -> Self {
        Mat2([[p, q], [q, -p]])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn transpose(&self) -> Self {
        let m = self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    /// Frobenius product `A : B = sum_ij A_ij B_ij`.
    pub fn ddot(&self, other: &Mat2) -> f64 {
        let (a, b) = (self.0, other.0);
        a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
    }

    pub fn scale(&self, s: f64) -> Self {
        let m = self.0;
        Mat2([[s * m[0][0], s * m[0][1]], [s * m[1][0], s * m[1][1]]])
    }

    /// Largest deviation from being symmetric and traceless.
    pub fn s0_defect(&self) -> f64 {
        (self.0[0][1] - self.0[1][0]).abs().max(self.trace().abs())
    }

    /// Projects onto the `(p, q)` coordinates of the symmetric traceless part.
    pub fn to_pq(&self) -> (f64, f64) {
        let m = self.0;
        (0.5 * (m[0][0] - m[1][1]), 0.5 * (m[0][1] + m[1][0]))
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, rhs: Mat2) -> Mat2 {
        let (a, b) = (self.0, rhs.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, rhs: Mat2) -> Mat2 {
        self + rhs.scale(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, rhs: Mat2) -> Mat2 {
        let (a, b) = (self.0, rhs.0);
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(out)
    }
}

/// Q-tensor field in `(p, q)` form.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensorField {
    grid: Grid,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl QTensorField {
    pub fn new(grid: Grid, p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        grid.check_len(&p)?;
        grid.check_len(&q)?;
        Ok(Self { grid, p, q })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            p: grid.zeros(),
            q: grid.zeros(),
        }
    }

    pub fn constant(grid: Grid, p: f64, q: f64) -> Self {
        Self {
            grid,
            p: vec![p; grid.len()],
            q: vec![q; grid.len()],
        }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Pointwise `(p, q) -> (f(p, q), g(p, q))`.
    pub fn map(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let (p, q) = self
            .p
            .iter()
            .zip(&self.q)
            .map(|(&p, &q)| f(p, q))
            .unzip();
        Self {
            grid: self.grid,
            p,
            q,
        }
    }

    pub fn axpy(&self, alpha: f64, other: &QTensorField) -> Self {
        Self {
            grid: self.grid,
            p: axpy(&self.p, alpha, &other.p),
            q: axpy(&self.q, alpha, &other.q),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|p, q| (s * p, s * q))
    }

    /// `L^2` inner product with the Frobenius pairing, `int A : B dx`.
    pub fn inner(&self, other: &QTensorField) -> f64 {
        let h = self.grid.cell_area();
        2.0 * h * (dot(&self.p, &other.p) + dot(&self.q, &other.q))
    }

    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Largest Frobenius norm over the grid.
    pub fn norm_linf(&self) -> f64 {
        tr_q2(self).into_iter().fold(0.0, f64::max).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(&self.q).all(|v| v.is_finite())
    }
}

/// Divergence-free velocity field.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    grid: Grid,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl VelocityField {
    pub fn new(grid: Grid, u1: Vec<f64>, u2: Vec<f64>) -> Result<Self> {
        grid.check_len(&u1)?;
        grid.check_len(&u2)?;
        Ok(Self { grid, u1, u2 })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            u1: grid.zeros(),
            u2: grid.zeros(),
        }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn axpy(&self, alpha: f64, other: &VelocityField) -> Self {
        Self {
            grid: self.grid,
            u1: axpy(&self.u1, alpha, &other.u1),
            u2: axpy(&self.u2, alpha, &other.u2),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            u1: self.u1.iter().map(|v| s * v).collect(),
            u2: self.u2.iter().map(|v| s * v).collect(),
        }
    }

    pub fn inner(&self, other: &VelocityField) -> f64 {
        self.grid.cell_area() * (dot(&self.u1, &other.u1) + dot(&self.u2, &other.u2))
    }

    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Largest pointwise speed.
    pub fn norm_linf(&self) -> f64 {
        self.u1
            .iter()
            .zip(&self.u2)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.u1.iter().chain(&self.u2).all(|v| v.is_finite())
    }
}

/// Time plus the pair `(u, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub u: VelocityField,
    pub q: QTensorField,
}

impl SimState {
    pub fn new(t: f64, u: VelocityField, q: QTensorField) -> Result<Self> {
        u.grid().check_same(&q.grid())?;
        Ok(Self { t, u, q })
    }

    pub fn grid(&self) -> Grid {
        self.q.grid()
    }
}

/// The full matrix of `q` at grid point `(i, j)`.
pub fn q_to_matrix(q: &QTensorField, i: usize, j: usize) -> Result<Mat2> {
    let n = q.grid.n();
    if i >= n || j >= n {
        return Err(Error::IndexOutOfRange { i, j, n });
    }
    let k = q.grid.index(i, j);
    Ok(Mat2::from_pq(q.p[k], q.q[k]))
}

/// Pointwise `tr(Q^2) = 2 (p^2 + q^2)`.
pub fn tr_q2(q: &QTensorField) -> Vec<f64> {
    q.p.iter()
        .zip(&q.q)
        .map(|(p, q)| 2.0 * (p * p + q * q))
        .collect()
}

/// Below this scalar order the director angle is undefined and reported as 0.
pub const DIRECTOR_THRESHOLD: f64 = 1e-8;

/// Scalar order `s` and director angle `theta` with
/// `Q = s (n n^T - I/2)`, `n = (cos theta, sin theta)`.
///
/// `theta` lies in `(-pi/2, pi/2]`; it is set to 0 where `s` is below
/// [`DIRECTOR_THRESHOLD`].
pub fn director_decompose(q: &QTensorField) -> (Vec<f64>, Vec<f64>) {
    q.p.iter()
        .zip(&q.q)
        .map(|(&p, &q)| {
            let s = 2.0 * p.hypot(q);
            if s <= DIRECTOR_THRESHOLD {
                return (s, 0.0);
            }
            let mut theta = 0.5 * q.atan2(p);
            // atan2 returns -pi for (p<0, q=-0.0); fold onto the upper end
            if theta <= -std::f64::consts::FRAC_PI_2 {
                theta += std::f64::consts::PI;
            }
            (s, theta)
        })
        .unzip()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(x: &[f64], alpha: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a + alpha * b).collect()
}

pub(crate) fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}
