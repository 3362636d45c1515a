//! Digamma, trigamma and friends for positive real arguments.
//!
//! All polygamma functions shift the argument upward with the recurrence
//! until it is at least [`ASYMPTOTIC_THRESHOLD`], then evaluate the
//! asymptotic (Bernoulli-number) series.

use crate::error::{Error, Result};

const ASYMPTOTIC_THRESHOLD: f64 = 10.0;

fn check_domain(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Domain(format!("{name} requires a finite x > 0, got {x}")));
    }
    Ok(())
}

/// Digamma function ψ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    check_domain("digamma", x)?;
    Ok(psi(x))
}

/// Trigamma function ψ′(x) for x > 0.
pub fn trigamma(x: f64) -> Result<f64> {
    check_domain("trigamma", x)?;
    Ok(psi1(x))
}

/// Tetragamma function ψ″(x) for x > 0. Used for analytic Newton Jacobians.
pub fn tetragamma(x: f64) -> Result<f64> {
    check_domain("tetragamma", x)?;
    Ok(psi2(x))
}

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    check_domain("ln_gamma", x)?;
    Ok(lgamma(x))
}

pub(crate) fn psi(mut x: f64) -> f64 {
    // The smallest shift term dominates for tiny x; subtract it last so it
    // is rounded once.
    let mut leading = 0.0;
    let mut shift = 0.0;
    if x < ASYMPTOTIC_THRESHOLD {
        leading = 1.0 / x;
        x += 1.0;
        while x < ASYMPTOTIC_THRESHOLD {
            shift += 1.0 / x;
            x += 1.0;
        }
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    (x.ln() - 0.5 * inv - series - shift) - leading
}

pub(crate) fn psi1(mut x: f64) -> f64 {
    let mut leading = 0.0;
    let mut shift = 0.0;
    if x < ASYMPTOTIC_THRESHOLD {
        leading = 1.0 / (x * x);
        x += 1.0;
        while x < ASYMPTOTIC_THRESHOLD {
            shift += 1.0 / (x * x);
            x += 1.0;
        }
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                - inv2
                    * (1.0 / 30.0
                        - inv2
                            * (1.0 / 42.0
                                - inv2
                                    * (1.0 / 30.0
                                        - inv2 * (5.0 / 66.0 - inv2 * (691.0 / 2730.0 - inv2 * 7.0 / 6.0))))));
    (series + shift) + leading
}

pub(crate) fn psi2(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        shift -= 2.0 / (x * x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = -inv2
        - inv * inv2
        - inv2
            * inv2
            * (0.5
                - inv2
                    * (1.0 / 6.0
                        - inv2
                            * (1.0 / 6.0
                                - inv2 * (3.0 / 10.0 - inv2 * (5.0 / 6.0 - inv2 * 691.0 / 210.0)))));
    series + shift
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

pub(crate) fn lgamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the Lanczos sum in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - lgamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub(crate) fn ln_beta(a: f64, b: f64) -> f64 {
    lgamma(a) + lgamma(b) - lgamma(a + b)
}

/// log of the binomial coefficient C(n, k).
pub(crate) fn ln_choose(n: u64, k: u64) -> f64 {
    if k == 0 || k == n {
        return 0.0;
    }
    lgamma(n as f64 + 1.0) - lgamma(k as f64 + 1.0) - lgamma((n - k) as f64 + 1.0)
}
