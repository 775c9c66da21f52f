//! Standard-normal primitives shared by the probit model, the solver and the
//! samplers.
//!
//! The CDF goes through `libm`'s complementary error function, which is
//! accurate to a few ulps even deep in the tail.  The quantile takes a
//! library approximation as a starting point and polishes it with two Newton
//! steps against that CDF.  Mills-ratio helpers switch to an asymptotic
//! series where the direct ratio would lose all precision.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse of [`std_normal_cdf`] on (0, 1); returns the signed infinity at
/// the endpoints.  Two Newton steps on top of the library approximation take
/// the residual to a few ulps across the usable range.
pub fn std_normal_quantile(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "quantile needs p in [0, 1], got {p}");
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let rough = Normal::new(0.0, 1.0)
        .expect("standard normal parameters are valid")
        .inverse_cdf(p);
    let mut x = rough;
    for _ in 0..2 {
        let density = std_normal_pdf(x);
        if density <= 1e-300 {
            break;
        }
        x -= (std_normal_cdf(x) - p) / density;
    }
    x
}

/// Asymptotic expansion of the Mills ratio Φ(z)/φ(z) for z far below zero:
/// (-1/z)(1 - u + 3u² - 15u³ + 105u⁴ - 945u⁵) with u = 1/z².
fn mills_series(z: f64) -> f64 {
    let u = 1.0 / (z * z);
    (-1.0 / z) * (1.0 - u * (1.0 - 3.0 * u * (1.0 - 5.0 * u * (1.0 - 7.0 * u * (1.0 - 9.0 * u)))))
}

/// Inverse Mills ratio φ(z)/Φ(z), finite for any finite `z`.
pub fn inverse_mills(z: f64) -> f64 {
    if z < -30.0 {
        1.0 / mills_series(z)
    } else {
        std_normal_pdf(z) / std_normal_cdf(z)
    }
}

/// Natural log of Φ(z), finite for any finite `z` (direct `ln` of the CDF
/// underflows past z ≈ -38).
pub fn log_std_normal_cdf(z: f64) -> f64 {
    if z < -30.0 {
        // ln Φ = ln φ + ln(Φ/φ)
        -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() + mills_series(z).ln()
    } else {
        std_normal_cdf(z).ln()
    }
}

/// Score of one probit observation with linear predictor `eta`:
/// φ(η)/Φ(η) when the outcome is positive, -φ(η)/(1-Φ(η)) otherwise.
pub fn probit_score(eta: f64, y: bool) -> f64 {
    if y {
        inverse_mills(eta)
    } else {
        -inverse_mills(-eta)
    }
}

/// Observed-information weight λ(λ + η) of one probit observation; lies in
/// (0, 1) for finite η.
pub fn probit_weight(eta: f64, y: bool) -> f64 {
    let lambda = probit_score(eta, y);
    lambda * (lambda + eta)
}
