//! Fourier kernels on the periodic unit square.
//!
//! Coefficients are normalised so that `f(x) = sum_k c_k exp(2 pi i k.x)`
//! with integer wavevectors `k = (k1, k2)`; the physical factor `2 pi` is
//! applied inside every symbol. Mode index `m` maps to `k = m` for
//! `m <= n/2` and `k = m - n` above, so the Nyquist line carries `k = n/2`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::fields::{Grid, VelocityField};

/// Fourier coefficients of a real field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    pub coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Coefficient at integer wavevector `k`, `|k_i| < n/2`.
    pub fn at(&self, k1: i64, k2: i64) -> Complex64 {
        let n = self.grid.n() as i64;
        let m = |k: i64| k.rem_euclid(n) as usize;
        self.coeffs[self.grid.index(m(k1), m(k2))]
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add(&self, other: &SpectralField) -> Self {
        Self {
            grid: self.grid,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Largest deviation from `c(-k) = conj(c(k))`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.grid.n();
        let mut worst: f64 = 0.0;
        for m1 in 0..n {
            for m2 in 0..n {
                let a = self.coeffs[m1 * n + m2];
                let b = self.coeffs[((n - m1) % n) * n + (n - m2) % n];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X1,
    X2,
}

/// FFT plans and wavenumber tables for one grid.
///
/// Plans are shared read-only; every call allocates its own work buffers,
/// so one `Spectral` may be used from several threads at once.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumber: Vec<i64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let n = grid.n();
        let mut planner = FftPlanner::new();
        let wavenumber = (0..n)
            .map(|m| if m <= n / 2 { m as i64 } else { m as i64 - n as i64 })
            .collect();
        Self {
            grid,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            wavenumber,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Integer wavenumber of mode index `m`.
    #[inline]
    pub fn wavenumber(&self, m: usize) -> i64 {
        self.wavenumber[m]
    }

    #[inline]
    fn is_nyquist(&self, m: usize) -> bool {
        m == self.grid.n() / 2
    }

    /// `(k1, k2)` for every coefficient slot, row-major.
    pub fn wavevectors(&self) -> impl Iterator<Item = (usize, i64, i64)> + '_ {
        let n = self.grid.n();
        (0..n).flat_map(move |m1| {
            (0..n).map(move |m2| (m1 * n + m2, self.wavenumber[m1], self.wavenumber[m2]))
        })
    }

    fn fft2(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.grid.n();
        // along x2 (contiguous rows), then along x1 via transpose
        plan.process(data);
        let mut t = vec![Complex64::new(0.0, 0.0); data.len()];
        transpose(data, &mut t, n);
        plan.process(&mut t);
        transpose(&t, data, n);
    }

    pub fn forward(&self, field: &[f64]) -> Result<SpectralField> {
        self.grid.check_len(field)?;
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut buf, &self.forward);
        let scale = 1.0 / self.grid.len() as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        Ok(SpectralField {
            grid: self.grid,
            coeffs: buf,
        })
    }

    /// Transforms two real fields with one complex FFT.
    pub fn forward_pair(&self, f: &[f64], g: &[f64]) -> Result<(SpectralField, SpectralField)> {
        self.grid.check_len(f)?;
        self.grid.check_len(g)?;
        let n = self.grid.n();
        let mut z: Vec<Complex64> = f
            .iter()
            .zip(g)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        self.fft2(&mut z, &self.forward);
        let scale = 0.5 / self.grid.len() as f64;
        let mut fh = vec![Complex64::new(0.0, 0.0); z.len()];
        let mut gh = fh.clone();
        for m1 in 0..n {
            for m2 in 0..n {
                let a = z[m1 * n + m2];
                let b = z[((n - m1) % n) * n + (n - m2) % n].conj();
                fh[m1 * n + m2] = (a + b) * scale;
                // (a - b) / (2i)
                let d = (a - b) * scale;
                gh[m1 * n + m2] = Complex64::new(d.im, -d.re);
            }
        }
        Ok((
            SpectralField {
                grid: self.grid,
                coeffs: fh,
            },
            SpectralField {
                grid: self.grid,
                coeffs: gh,
            },
        ))
    }

    /// Real part of the synthesis; the imaginary part is roundoff for
    /// Hermitian input.
    pub fn inverse(&self, f: &SpectralField) -> Vec<f64> {
        debug_assert_eq!(f.grid, self.grid);
        let mut buf = f.coeffs.clone();
        self.fft2(&mut buf, &self.inverse);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Synthesises two Hermitian spectra with one complex FFT.
    pub fn inverse_pair(&self, f: &SpectralField, g: &SpectralField) -> (Vec<f64>, Vec<f64>) {
        let mut buf: Vec<Complex64> = f
            .coeffs
            .iter()
            .zip(&g.coeffs)
            .map(|(a, b)| a + Complex64::new(-b.im, b.re))
            .collect();
        self.fft2(&mut buf, &self.inverse);
        buf.into_iter().map(|c| (c.re, c.im)).unzip()
    }

    /// Multiplies by `(2 pi i k_axis)^order`. Odd orders zero the Nyquist
    /// line along `axis` so the result stays the transform of a real field.
    pub fn derivative(&self, f: &SpectralField, axis: Axis, order: u32) -> SpectralField {
        let n = self.grid.n();
        let symbol: Vec<Complex64> = (0..n)
            .map(|m| {
                if order % 2 == 1 && self.is_nyquist(m) {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, 2.0 * PI * self.wavenumber[m] as f64).powu(order)
                }
            })
            .collect();
        let mut out = f.clone();
        for (m1, row) in out.coeffs.chunks_mut(n).enumerate() {
            for (m2, slot) in row.iter_mut().enumerate() {
                *slot *= match axis {
                    Axis::X1 => symbol[m1],
                    Axis::X2 => symbol[m2],
                };
            }
        }
        out
    }

    pub fn laplacian(&self, f: &SpectralField) -> SpectralField {
        let mut out = f.clone();
        for (slot, k1, k2) in self.wavevectors() {
            out.coeffs[slot] *= -4.0 * PI * PI * (k1 * k1 + k2 * k2) as f64;
        }
        out
    }

    /// Largest retained wavenumber under the 2/3 rule.
    pub fn dealias_cutoff(&self) -> f64 {
        self.grid.n() as f64 / 3.0
    }

    /// Zeroes every mode with `max(|k1|, |k2|) > n/3`. Quadratic products of
    /// truncated fields are alias-free when 3 does not divide `n`.
    pub fn dealias(&self, f: &SpectralField) -> SpectralField {
        let mut out = f.clone();
        self.dealias_in_place(&mut out);
        out
    }

    pub fn dealias_in_place(&self, f: &mut SpectralField) {
        let cut = self.dealias_cutoff();
        for (slot, k1, k2) in self.wavevectors() {
            if k1.abs().max(k2.abs()) as f64 > cut {
                f.coeffs[slot] = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Solves `(I - alpha Laplacian) g = f`.
    pub fn invert_helmholtz(&self, f: &SpectralField, alpha: f64) -> SpectralField {
        debug_assert!(alpha > 0.0);
        let mut out = f.clone();
        for (slot, k1, k2) in self.wavevectors() {
            out.coeffs[slot] /= 1.0 + alpha * 4.0 * PI * PI * (k1 * k1 + k2 * k2) as f64;
        }
        out
    }

    /// Leray projection in coefficient space; drops the mean and the
    /// Nyquist lines.
    pub fn leray_project_spectral(&self, u1: &mut SpectralField, u2: &mut SpectralField) {
        let n = self.grid.n();
        for m1 in 0..n {
            for m2 in 0..n {
                let slot = m1 * n + m2;
                if (m1 == 0 && m2 == 0) || self.is_nyquist(m1) || self.is_nyquist(m2) {
                    u1.coeffs[slot] = Complex64::new(0.0, 0.0);
                    u2.coeffs[slot] = Complex64::new(0.0, 0.0);
                    continue;
                }
                let (k1, k2) = (self.wavenumber[m1] as f64, self.wavenumber[m2] as f64);
                let kk = k1 * k1 + k2 * k2;
                let (a, b) = (u1.coeffs[slot], u2.coeffs[slot]);
                let kdot = (a * k1 + b * k2) / kk;
                u1.coeffs[slot] = a - kdot * k1;
                u2.coeffs[slot] = b - kdot * k2;
            }
        }
    }

    pub fn leray_project(&self, u: &VelocityField) -> VelocityField {
        let (mut a, mut b) = self
            .forward_pair(&u.u1, &u.u2)
            .expect("velocity field lives on this grid");
        self.leray_project_spectral(&mut a, &mut b);
        let (u1, u2) = self.inverse_pair(&a, &b);
        VelocityField::new(self.grid, u1, u2).expect("same grid")
    }

    /// `max_k |k . u_hat(k)|` with integer `k`.
    pub fn divergence_max(&self, u1: &SpectralField, u2: &SpectralField) -> f64 {
        self.wavevectors()
            .map(|(slot, k1, k2)| (u1.coeffs[slot] * k1 as f64 + u2.coeffs[slot] * k2 as f64).norm())
            .fold(0.0, f64::max)
    }

    /// `int |grad f|^2 dx` by Parseval.
    pub fn grad_norm_sq(&self, f: &SpectralField) -> f64 {
        self.wavevectors()
            .map(|(slot, k1, k2)| 4.0 * PI * PI * (k1 * k1 + k2 * k2) as f64 * f.coeffs[slot].norm_sqr())
            .sum()
    }

    /// `int f^2 dx` by Parseval.
    pub fn norm_sq(&self, f: &SpectralField) -> f64 {
        f.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Moves coefficients onto another grid: zero-padding when refining,
    /// truncation when coarsening. Nyquist lines of the source are dropped.
    pub fn resample(&self, f: &SpectralField, target: Grid) -> SpectralField {
        let src = self.grid.n() as i64;
        let dst = target.n() as i64;
        let half = src.min(dst) / 2;
        let mut out = SpectralField::zeros(target);
        for (slot, k1, k2) in self.wavevectors() {
            if k1.abs() >= half || k2.abs() >= half {
                continue;
            }
            let t = (k1.rem_euclid(dst) * dst + k2.rem_euclid(dst)) as usize;
            out.coeffs[t] = f.coeffs[slot];
        }
        out
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    const B: usize = 16;
    for ib in (0..n).step_by(B) {
        for jb in (0..n).step_by(B) {
            for i in ib..(ib + B).min(n) {
                for j in jb..(jb + B).min(n) {
                    dst[j * n + i] = src[i * n + j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::max_abs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (Grid, Spectral) {
        let g = Grid::new(n).unwrap();
        (g, Spectral::new(g))
    }

    fn random_field(g: Grid, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_has_only_mean() {
        let (g, sp) = setup(16);
        let f = sp.forward(&vec![1.0; g.len()]).unwrap();
        assert!((f.coeffs[0].re - 1.0).abs() < 1e-15);
        assert!(f.coeffs[1..].iter().all(|c| c.norm() < 1e-15));
    }

    #[test]
    fn single_mode_has_two_coefficients() {
        let (g, sp) = setup(16);
        let f = sp.forward(&g.sample(|x, _| (2.0 * PI * x).sin())).unwrap();
        let nonzero: Vec<_> = sp
            .wavevectors()
            .filter(|&(s, _, _)| f.coeffs[s].norm() > 1e-12)
            .map(|(_, k1, k2)| (k1, k2))
            .collect();
        assert_eq!(nonzero.len(), 2);
        assert!(nonzero.contains(&(1, 0)) && nonzero.contains(&(-1, 0)));
        assert!((f.at(1, 0) - Complex64::new(0.0, -0.5)).norm() < 1e-15);
    }

    #[test]
    fn round_trip() {
        let (g, sp) = setup(32);
        let f = random_field(g, 1);
        let back = sp.inverse(&sp.forward(&f).unwrap());
        assert!(max_diff(&f, &back) <= 1e-12 * max_abs(&f));
        assert!(sp.forward(&f).unwrap().hermitian_defect() < 1e-15);
    }

    #[test]
    fn pair_transforms_match_single() {
        let (g, sp) = setup(16);
        let (f, h) = (random_field(g, 2), random_field(g, 3));
        let (fh, hh) = sp.forward_pair(&f, &h).unwrap();
        let (fs, hs) = (sp.forward(&f).unwrap(), sp.forward(&h).unwrap());
        for i in 0..g.len() {
            assert!((fh.coeffs[i] - fs.coeffs[i]).norm() < 1e-15);
            assert!((hh.coeffs[i] - hs.coeffs[i]).norm() < 1e-15);
        }
        let (f2, h2) = sp.inverse_pair(&fh, &hh);
        assert!(max_diff(&f, &f2) < 1e-13 && max_diff(&h, &h2) < 1e-13);
    }

    #[test]
    fn size_mismatch_rejected() {
        let (_, sp) = setup(16);
        assert!(sp.forward(&[0.0; 10]).is_err());
    }

    #[test]
    fn derivative_of_sine() {
        let (g, sp) = setup(32);
        let f = sp.forward(&g.sample(|x, _| (2.0 * PI * x).sin())).unwrap();
        let d = sp.inverse(&sp.derivative(&f, Axis::X1, 1));
        let want = g.sample(|x, _| 2.0 * PI * (2.0 * PI * x).cos());
        assert!(max_diff(&d, &want) < 1e-12);
        let d2 = sp.inverse(&sp.derivative(&f, Axis::X2, 1));
        assert!(max_abs(&d2) < 1e-12);
    }

    #[test]
    fn laplacian_eigenfunction() {
        let (g, sp) = setup(32);
        let s = |x: f64, y: f64| (2.0 * PI * x).sin() * (2.0 * PI * y).sin();
        let f = sp.forward(&g.sample(s)).unwrap();
        let lap = sp.inverse(&sp.laplacian(&f));
        let want = g.sample(|x, y| -8.0 * PI * PI * s(x, y));
        assert!(max_diff(&lap, &want) < 1e-12 * 8.0 * PI * PI);
        // second-order axis derivatives agree with the Laplacian
        let sum = sp
            .derivative(&f, Axis::X1, 2)
            .add(&sp.derivative(&f, Axis::X2, 2));
        assert!(max_diff(&sp.inverse(&sum), &lap) < 1e-10);
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let (g, sp) = setup(16);
        let f = sp.forward(&vec![3.5; g.len()]).unwrap();
        for axis in [Axis::X1, Axis::X2] {
            for order in [1, 2] {
                assert!(max_abs(&sp.inverse(&sp.derivative(&f, axis, order))) < 1e-14);
            }
        }
    }

    #[test]
    fn dealias_cases() {
        let (g, sp) = setup(32);
        // low band untouched
        let low = g.sample(|x, y| (2.0 * PI * 10.0 * x).cos() + (2.0 * PI * 3.0 * y).sin());
        let f = sp.forward(&low).unwrap();
        let d = sp.dealias(&f);
        assert!(d.coeffs.iter().zip(&f.coeffs).all(|(a, b)| (a - b).norm() < 1e-15));
        // k = (n/2 - 1, 0) removed
        let high = g.sample(|x, _| (2.0 * PI * 15.0 * x).cos());
        let f = sp.dealias(&sp.forward(&high).unwrap());
        assert!(f.coeffs.iter().all(|c| c.norm() < 1e-15));
    }

    #[test]
    fn dealiased_product_matches_fine_grid() {
        // two fields band-limited to n/3; the dealiased product on the n grid
        // must equal the exact product (2n grid) truncated to n/3
        let (g, sp) = setup(32);
        let fine = Grid::new(64).unwrap();
        let spf = Spectral::new(fine);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut band = || {
            let mut s = SpectralField::zeros(g);
            for (slot, k1, k2) in sp.wavevectors() {
                if k1.abs().max(k2.abs()) <= 10 {
                    s.coeffs[slot] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                }
            }
            // hermitize through a real round trip
            sp.forward(&sp.inverse(&s)).unwrap()
        };
        let (a, b) = (band(), band());
        let prod: Vec<f64> = sp.inverse(&a).iter().zip(sp.inverse(&b)).map(|(x, y)| x * y).collect();
        let coarse = sp.dealias(&sp.forward(&prod).unwrap());

        let (af, bf) = (sp.resample(&a, fine), sp.resample(&b, fine));
        let pf: Vec<f64> = spf.inverse(&af).iter().zip(spf.inverse(&bf)).map(|(x, y)| x * y).collect();
        let exact = sp.dealias(&spf.resample(&spf.forward(&pf).unwrap(), g));
        for i in 0..g.len() {
            assert!((coarse.coeffs[i] - exact.coeffs[i]).norm() < 1e-12);
        }
        // idempotent
        assert_eq!(sp.dealias(&coarse), coarse);
    }

    fn stream_velocity(g: Grid, sp: &Spectral, seed: u64) -> VelocityField {
        let psi = sp.forward(&random_field(g, seed)).unwrap();
        let u1 = sp.inverse(&sp.derivative(&psi, Axis::X2, 1));
        let u2 = sp.inverse(&sp.derivative(&psi, Axis::X1, 1)).iter().map(|v| -v).collect();
        VelocityField::new(g, u1, u2).unwrap()
    }

    #[test]
    fn leray_fixes_divergence_free_fields() {
        let (g, sp) = setup(16);
        let mut u = stream_velocity(g, &sp, 5);
        // remove Nyquist content so the input lies in the projection's range
        let (mut a, mut b) = sp.forward_pair(&u.u1, &u.u2).unwrap();
        sp.dealias_in_place(&mut a);
        sp.dealias_in_place(&mut b);
        (u.u1, u.u2) = sp.inverse_pair(&a, &b);
        let pu = sp.leray_project(&u);
        let scale = max_abs(&u.u1).max(1.0);
        assert!(max_diff(&pu.u1, &u.u1) < 1e-12 * scale);
        assert!(max_diff(&pu.u2, &u.u2) < 1e-12 * scale);
    }

    #[test]
    fn leray_kills_gradients() {
        let (g, sp) = setup(16);
        let phi = sp.forward(&random_field(g, 6)).unwrap();
        let u = VelocityField::new(
            g,
            sp.inverse(&sp.derivative(&phi, Axis::X1, 1)),
            sp.inverse(&sp.derivative(&phi, Axis::X2, 1)),
        )
        .unwrap();
        let pu = sp.leray_project(&u);
        assert!(max_abs(&pu.u1).max(max_abs(&pu.u2)) < 1e-12 * max_abs(&u.u1).max(1.0));
    }

    #[test]
    fn leray_idempotent_self_adjoint_divergence_free() {
        let (g, sp) = setup(16);
        let u = VelocityField::new(g, random_field(g, 7), random_field(g, 8)).unwrap();
        let v = VelocityField::new(g, random_field(g, 9), random_field(g, 10)).unwrap();
        let pu = sp.leray_project(&u);
        let ppu = sp.leray_project(&pu);
        assert!(max_diff(&pu.u1, &ppu.u1) < 1e-12 && max_diff(&pu.u2, &ppu.u2) < 1e-12);
        let pv = sp.leray_project(&v);
        assert!((pu.inner(&v) - u.inner(&pv)).abs() < 1e-12);
        let (a, b) = sp.forward_pair(&pu.u1, &pu.u2).unwrap();
        assert!(sp.divergence_max(&a, &b) <= 1e-12 * pu.norm_l2().max(1.0));
        assert!(a.coeffs[0].norm() < 1e-16 && b.coeffs[0].norm() < 1e-16);
    }

    #[test]
    fn helmholtz_cases() {
        let (g, sp) = setup(16);
        let c = sp.forward(&vec![2.0; g.len()]).unwrap();
        assert_eq!(sp.invert_helmholtz(&c, 0.7), c);

        let f = sp.forward(&g.sample(|x, _| (2.0 * PI * x).sin())).unwrap();
        let h = sp.inverse(&sp.invert_helmholtz(&f, 1.0));
        let want = g.sample(|x, _| (2.0 * PI * x).sin() / (1.0 + 4.0 * PI * PI));
        assert!(max_diff(&h, &want) < 1e-14);

        let r = sp.forward(&random_field(g, 12)).unwrap();
        let alpha = 0.03;
        let gsol = sp.invert_helmholtz(&r, alpha);
        let back = gsol.add(&sp.laplacian(&gsol).scaled(-alpha));
        assert!(max_diff(&sp.inverse(&back), &sp.inverse(&r)) < 1e-12);
    }

    #[test]
    fn helmholtz_commutes_with_derivative() {
        let (g, sp) = setup(16);
        let r = sp.forward(&random_field(g, 13)).unwrap();
        let a = sp.invert_helmholtz(&sp.derivative(&r, Axis::X2, 1), 0.1);
        let b = sp.derivative(&sp.invert_helmholtz(&r, 0.1), Axis::X2, 1);
        assert!(max_diff(&sp.inverse(&a), &sp.inverse(&b)) < 1e-13);
    }

    #[test]
    fn parseval_gradient() {
        let (g, sp) = setup(32);
        // |grad sin(2 pi x) sin(2 pi y)|^2 integrates to 4 pi^2 * 2 * 1/4
        let f = sp
            .forward(&g.sample(|x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin()))
            .unwrap();
        assert!((sp.grad_norm_sq(&f) - 2.0 * PI * PI).abs() < 1e-12);
        assert!((sp.norm_sq(&f) - 0.25).abs() < 1e-15);
    }
}
