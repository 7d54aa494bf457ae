//! Special functions needed by the Dirichlet losses.

use alloc::format;

use crate::error::{Error, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const ASYMPTOTIC_FROM: f64 = 6.0;

/// Digamma ψ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("digamma requires finite x > 0, got {x}")));
    }
    Ok(digamma_pos(x))
}

/// Digamma without the domain check; callers guarantee x > 0.
pub(crate) fn digamma_pos(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    // Bernoulli tail: 1/12, -1/120, 1/252, -1/240, 1/132, -691/32760, 1/12
    let tail = r2
        * (1.0 / 12.0
            - r2 * (1.0 / 120.0
                - r2 * (1.0 / 252.0
                    - r2 * (1.0 / 240.0
                        - r2 * (1.0 / 132.0 - r2 * (691.0 / 32760.0 - r2 / 12.0))))));
    acc + libm::log(x) - 0.5 * r - tail
}

/// Trigamma ψ'(x) for x > 0.
pub fn trigamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("trigamma requires finite x > 0, got {x}")));
    }
    Ok(trigamma_pos(x))
}

pub(crate) fn trigamma_pos(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    // 1/x + 1/2x² + Σ B_2k / x^(2k+1)
    let tail = r
        * r2
        * (1.0 / 6.0
            - r2 * (1.0 / 30.0
                - r2 * (1.0 / 42.0
                    - r2 * (1.0 / 30.0
                        - r2 * (5.0 / 66.0 - r2 * (691.0 / 2730.0 - r2 * 7.0 / 6.0))))));
    acc + r + 0.5 * r2 + tail
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("ln_gamma requires finite x > 0, got {x}")));
    }
    Ok(libm::lgamma(x))
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
