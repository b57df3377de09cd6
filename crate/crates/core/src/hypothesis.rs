//! Regularity parameters and the modified Beta function.
//!
//! The solver operates under a system of strict inequalities tying together the
//! solution Hölder order β, the driver Hölder order β′, the fractional order α
//! used by the Weyl derivatives, the sampling regularity H, and the fractional
//! power δ of the generator. [`validate_params`] checks the whole system and
//! reports violations as data; [`modified_beta`] evaluates the weighted Beta
//! integral ∫_a^b (b−q)^η (q−a)^ν dq that prices every singular-kernel estimate.

use crate::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Hölder/regularity exponents steering the whole computation.
///
/// All fields are plain exponents; see [`validate_params`] for the admissible
/// region. `hurst` is the sampling regularity of the driver (1/2 for white
/// noise), `delta` the fractional power weighting the image space of the
/// diffusion coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderParams {
    pub beta: f64,
    pub beta_prime: f64,
    pub alpha: f64,
    pub hurst: f64,
    pub delta: f64,
}

impl HolderParams {
    /// A parameter set well inside the admissible region, usable with white
    /// noise (H = 1/2); handy default for tests and examples.
    pub fn reference() -> Self {
        HolderParams {
            beta: 0.34,
            beta_prime: 0.49,
            alpha: 0.665,
            hurst: 0.5,
            delta: 0.75,
        }
    }
}

/// Check the full inequality system; return one line per violated inequality.
///
/// An empty report means the parameters are admissible. Comparisons are strict
/// with zero tolerance: boundary cases count as violations, since every
/// estimate degenerates there. Violations are data, not errors — diagnostic
/// code may still run on an inadmissible set, only the solver refuses.
pub fn validate_params(p: &HolderParams) -> Vec<String> {
    let HolderParams {
        beta: b,
        beta_prime: bp,
        alpha: a,
        hurst: h,
        delta: d,
    } = *p;
    // (name, slack): the inequality holds iff slack > 0 (or ≥ 0 where noted).
    let mut report = Vec::new();
    let mut require = |ok: bool, line: String| {
        if !ok {
            report.push(line);
        }
    };

    require(1.0 / 3.0 < b, format!("1/3 < beta violated: beta = {b}"));
    require(b < h, format!("beta < hurst violated: beta = {b}, hurst = {h}"));
    require(h <= 0.5, format!("hurst <= 1/2 violated: hurst = {h}"));
    require(
        1.0 - b < a,
        format!("1 - beta < alpha violated: 1 - beta = {}, alpha = {a}", 1.0 - b),
    );
    require(
        a < 2.0 * b,
        format!("alpha < 2*beta violated: alpha = {a}, 2*beta = {}", 2.0 * b),
    );
    require(
        a < (b + 1.0) / 2.0,
        format!(
            "alpha < (beta+1)/2 violated: alpha = {a}, (beta+1)/2 = {}",
            (b + 1.0) / 2.0
        ),
    );
    require(
        -3.0 * b + a + h > 0.0,
        format!("-3*beta + alpha + hurst > 0 violated: value = {}", -3.0 * b + a + h),
    );
    require(
        -2.0 * b + 2.0 * a + h > 1.0,
        format!(
            "-2*beta + 2*alpha + hurst > 1 violated: value = {}",
            -2.0 * b + 2.0 * a + h
        ),
    );
    require(b < bp, format!("beta < beta_prime violated: beta = {b}, beta_prime = {bp}"));
    require(
        bp < h,
        format!("beta_prime < hurst violated: beta_prime = {bp}, hurst = {h}"),
    );
    require(
        -3.0 * b + a + bp > 0.0,
        format!(
            "-3*beta + alpha + beta_prime > 0 violated: value = {}",
            -3.0 * b + a + bp
        ),
    );
    require(
        -2.0 * b + 2.0 * a + bp > 1.0,
        format!(
            "-2*beta + 2*alpha + beta_prime > 1 violated: value = {}",
            -2.0 * b + 2.0 * a + bp
        ),
    );
    require(
        d + bp > 1.0,
        format!("delta + beta_prime > 1 violated: value = {}", d + bp),
    );
    require(d <= 1.0, format!("delta <= 1 violated: delta = {d}"));
    report
}

/// Weighted Beta integral ∫_a^b (b−q)^η (q−a)^ν dq in closed form.
///
/// Equals (b−a)^{ν+η+1} B(ν+1, η+1), evaluated through log-Gamma so that
/// strongly singular exponents (ν, η close to −1) stay accurate.
pub fn modified_beta(nu: f64, eta: f64, a: f64, b: f64) -> Result<f64> {
    if !(nu > -1.0) {
        return Err(Error::domain(format!("modified_beta requires nu > -1, got {nu}")));
    }
    if !(eta > -1.0) {
        return Err(Error::domain(format!("modified_beta requires eta > -1, got {eta}")));
    }
    if !(b > a) {
        return Err(Error::domain(format!("modified_beta requires b > a, got a = {a}, b = {b}")));
    }
    let log_value =
        (nu + eta + 1.0) * (b - a).ln() + ln_gamma(nu + 1.0) + ln_gamma(eta + 1.0)
            - ln_gamma(nu + eta + 2.0);
    Ok(log_value.exp())
}
