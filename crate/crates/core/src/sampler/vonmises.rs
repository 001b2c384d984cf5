//! Exact sampling of the von Mises law `∝ exp(κ cos(θ - μ))` on `[-π, π)`.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Above this concentration the Gaussian-envelope sampler is used.
const ENVELOPE_SWITCH: f64 = 50.0;

/// Maps an angle into `[-π, π)`.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    if (-PI..PI).contains(&x) {
        return x;
    }
    let y = x - TAU * ((x + PI) / TAU).floor();
    if y >= PI {
        y - TAU
    } else {
        y
    }
}

pub fn sample_von_mises<R: Rng + ?Sized>(rng: &mut R, mu: f64, kappa: f64) -> f64 {
    debug_assert!(kappa >= 0.0);
    let offset = if kappa < 1e-12 {
        return rng.random_range(-PI..PI);
    } else if kappa <= ENVELOPE_SWITCH {
        best_fisher(rng, kappa)
    } else {
        gaussian_envelope(rng, kappa)
    };
    wrap_angle(mu + offset)
}

/// Best & Fisher (1979) wrapped-Cauchy rejection.
fn best_fisher<R: Rng + ?Sized>(rng: &mut R, kappa: f64) -> f64 {
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let theta = f.clamp(-1.0, 1.0).acos();
            return if rng.random::<bool>() { theta } else { -theta };
        }
    }
}

/// Rejection from `N(0, π²/(4κ))`, using `1 - cos x ≥ 2x²/π²` on `[-π, π]`.
/// Acceptance tends to `2/π` for large `κ`.
fn gaussian_envelope<R: Rng + ?Sized>(rng: &mut R, kappa: f64) -> f64 {
    let sigma = PI / (2.0 * kappa.sqrt());
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let x = sigma * z;
        if !(-PI..PI).contains(&x) {
            continue;
        }
        let s = (0.5 * x).sin();
        let log_accept = -2.0 * kappa * s * s + 2.0 * kappa * x * x / (PI * PI);
        if rng.random::<f64>().ln() < log_accept {
            return x;
        }
    }
}
