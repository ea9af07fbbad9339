//! Seeded initial data.
//!
//! Smooth random fields draw complex Gaussian coefficients on the band
//! `1 <= max(|k1|, |k2|) <= kmax` with amplitude `|k|^-decay`; the same
//! seed gives bit-identical fields on one platform.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::fields::{max_abs, Grid, Parameters, QTensorField, VelocityField};
use crate::spectral::{Axis, Spectral, SpectralField};

/// Stream selector so velocity and Q draw independent numbers from one seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Velocity = 1,
    QP = 2,
    QQ = 3,
}

fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn smooth_spectrum(sp: &Spectral, rng: &mut ChaCha8Rng, decay: f64, kmax: usize) -> SpectralField {
    let mut s = SpectralField::zeros(sp.grid());
    let kmax = kmax.min(sp.grid().n() / 2 - 1) as i64;
    for (slot, k1, k2) in sp.wavevectors() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let band = k1.abs().max(k2.abs());
        if band == 0 || band > kmax {
            continue;
        }
        let mag = ((k1 * k1 + k2 * k2) as f64).sqrt().powf(-decay);
        s.coeffs[slot] = Complex64::new(re, im) * mag;
    }
    s
}

fn smooth_scalar(sp: &Spectral, rng: &mut ChaCha8Rng, decay: f64, kmax: usize, amplitude: f64) -> Vec<f64> {
    let f = sp.inverse(&smooth_spectrum(sp, rng, decay, kmax));
    let m = max_abs(&f);
    if m == 0.0 {
        return f;
    }
    f.into_iter().map(|v| v * amplitude / m).collect()
}

/// `u = (sin 2 pi x1 cos 2 pi x2, -cos 2 pi x1 sin 2 pi x2)`.
pub fn taylor_green(grid: Grid, amplitude: f64) -> VelocityField {
    VelocityField::new(
        grid,
        grid.sample(|x, y| amplitude * (2.0 * PI * x).sin() * (2.0 * PI * y).cos()),
        grid.sample(|x, y| -amplitude * (2.0 * PI * x).cos() * (2.0 * PI * y).sin()),
    )
    .expect("sampled on grid")
}

/// Divergence-free velocity from a random stream function, scaled so that
/// `max |u_i| = amplitude`.
pub fn random_smooth_velocity(
    sp: &Spectral,
    seed: u64,
    spectrum_decay: f64,
    kmax: usize,
    amplitude: f64,
) -> VelocityField {
    let mut rng = rng_for(seed, Stream::Velocity);
    let psi = smooth_spectrum(sp, &mut rng, spectrum_decay, kmax);
    let mut a = sp.derivative(&psi, Axis::X2, 1);
    let mut b = sp.derivative(&psi, Axis::X1, 1).scaled(-1.0);
    sp.leray_project_spectral(&mut a, &mut b);
    let (u1, u2) = (sp.inverse(&a), sp.inverse(&b));
    let m = max_abs(&u1).max(max_abs(&u2));
    let s = if m > 0.0 { amplitude / m } else { 0.0 };
    VelocityField::new(sp.grid(), u1, u2).expect("grid").scaled(s)
}

/// Independent smooth `p` and `q`, each scaled to `max |.| = amplitude`.
pub fn random_q(sp: &Spectral, seed: u64, spectrum_decay: f64, kmax: usize, amplitude: f64) -> QTensorField {
    let p = smooth_scalar(sp, &mut rng_for(seed, Stream::QP), spectrum_decay, kmax, amplitude);
    let q = smooth_scalar(sp, &mut rng_for(seed, Stream::QQ), spectrum_decay, kmax, amplitude);
    QTensorField::new(sp.grid(), p, q).expect("grid")
}

/// Uniform bulk minimiser along `x1` plus a smooth random perturbation.
pub fn perturbed_equilibrium(
    sp: &Spectral,
    params: &Parameters,
    seed: u64,
    spectrum_decay: f64,
    kmax: usize,
    amplitude: f64,
) -> QTensorField {
    let p0 = params.equilibrium_s2().sqrt();
    random_q(sp, seed, spectrum_decay, kmax, amplitude).map(|p, q| (p0 + p, q))
}
