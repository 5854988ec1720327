//! Digamma and unit-ball volume.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Digamma function for positive arguments.
///
/// Shifts the argument above 6 with `psi(x) = psi(x + 1) - 1/x`, then applies
/// the asymptotic series through the `x^-14` Bernoulli term. Absolute error
/// stays below 1e-12 on `[1e-3, 1e6]`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("digamma needs x > 0, got {x}")));
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < 6.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // B_2k / (2k) for k = 1..7
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    Ok(shift + x.ln() - 0.5 / x - series)
}

/// `ln Gamma(d/2 + 1)` for a positive integer `d`, exact recurrence from
/// `Gamma(1) = 1` or `Gamma(1/2) = sqrt(pi)`.
fn ln_gamma_half_plus_one(d: usize) -> f64 {
    if d % 2 == 0 {
        (1..=d / 2).map(|i| (i as f64).ln()).sum()
    } else {
        0.5 * PI.ln() + (0..=(d - 1) / 2).map(|j| (j as f64 + 0.5).ln()).sum::<f64>()
    }
}

/// `ln V_d` for the Euclidean unit ball in `d` dimensions.
pub fn log_unit_ball_volume(d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::Domain("unit-ball volume needs d >= 1".into()));
    }
    Ok(0.5 * d as f64 * PI.ln() - ln_gamma_half_plus_one(d))
}

/// Volume of the Euclidean unit ball, `pi^(d/2) / Gamma(d/2 + 1)`.
pub fn unit_ball_volume(d: usize) -> Result<f64> {
    log_unit_ball_volume(d).map(f64::exp)
}
