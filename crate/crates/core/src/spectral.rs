//! Truncated diagonal semigroup: eigen-data, semigroup application, fractional
//! norms, and measured smoothing constants.
//!
//! The generator is diagonal in a fixed orthonormal basis with strictly
//! positive eigenvalues λ₁ ≤ … ≤ λ_m of −A, so the semigroup, all fractional
//! powers, and every operator norm reduce to componentwise scalar work. The
//! smoothing inequalities that drive the solver's interval schedule have no
//! computable constants in closed form; [`estimate_suite`] measures them on
//! sampled grids instead.

use crate::hypothesis::HolderParams;
use crate::{Error, Result};

/// Diagonal model: eigenvalues of −A (ascending, strictly positive) plus the
/// fractional power δ used for image-space norms.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    eigenvalues: Vec<f64>,
    delta: f64,
}

impl SpectralModel {
    /// Validate and build a model. Eigenvalues must be finite, strictly
    /// positive, and ascending; δ must lie in [0, 1].
    pub fn new(eigenvalues: Vec<f64>, delta: f64) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::domain("spectral model needs at least one eigenvalue"));
        }
        for pair in eigenvalues.windows(2) {
            if !(pair[0] <= pair[1]) {
                return Err(Error::domain(format!(
                    "eigenvalues must be ascending: {} > {}",
                    pair[0], pair[1]
                )));
            }
        }
        if !eigenvalues.iter().all(|&l| l.is_finite() && l > 0.0) {
            return Err(Error::domain("eigenvalues must be finite and strictly positive"));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::domain(format!("delta must lie in [0,1], got {delta}")));
        }
        Ok(SpectralModel { eigenvalues, delta })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of retained modes.
    pub fn m(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Σ_i λ_i^{−2δ}, the squared Hilbert–Schmidt norm of the embedding that
    /// weights all operator-valued sums. Always finite at truncation; its
    /// magnitude is a useful scale diagnostic.
    pub fn trace_delta(&self) -> f64 {
        self.eigenvalues.iter().map(|&l| l.powf(-2.0 * self.delta)).sum()
    }
}

/// Dirichlet-Laplacian spectrum on the unit interval: λ_i = (iπ)², i = 1..m.
pub fn laplacian_model(m: usize, delta: f64) -> Result<SpectralModel> {
    let eigenvalues = (1..=m)
        .map(|i| (i as f64 * std::f64::consts::PI).powi(2))
        .collect();
    SpectralModel::new(eigenvalues, delta)
}

/// Apply S(t): component i of the result is x_i · e^{−λ_i t}.
pub fn semigroup_apply(model: &SpectralModel, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::domain(format!("semigroup time must be >= 0, got {t}")));
    }
    if x.len() != model.m() {
        return Err(Error::GridMismatch(format!(
            "vector has {} modes, model has {}",
            x.len(),
            model.m()
        )));
    }
    Ok(model
        .eigenvalues
        .iter()
        .zip(x)
        .map(|(&l, &xi)| xi * (-l * t).exp())
        .collect())
}

/// Graph norm of the fractional power: sqrt(Σ_i λ_i^{2·exponent} x_i²).
/// Exponent 0 recovers the plain Euclidean norm.
pub fn fractional_norm(model: &SpectralModel, exponent: f64, x: &[f64]) -> f64 {
    model
        .eigenvalues
        .iter()
        .zip(x)
        .map(|(&l, &xi)| {
            let w = l.powf(exponent) * xi;
            w * w
        })
        .sum::<f64>()
        .sqrt()
}

/// Measured constant of the smoothing estimate at one time:
/// sup_i λ_i^{g} e^{−λ_i t} · t^{g} with g = γ−δ ≥ 0.
///
/// The continuum envelope is (g/e)^g, approached when some eigenvalue sits
/// near g/t; at truncation the measured value can only be smaller.
pub fn smoothing_constant_at(model: &SpectralModel, gamma_minus_delta: f64, t: f64) -> f64 {
    let g = gamma_minus_delta;
    model
        .eigenvalues
        .iter()
        .map(|&l| l.powf(g) * (-l * t).exp() * t.powf(g))
        .fold(0.0, f64::max)
}

/// Measured constant of the S(t)−id estimate at one time:
/// sup_i λ_i^{−s} (1−e^{−λ_i t}) · t^{−s} with s = σ−θ ∈ [0, 1].
pub fn hold_constant_at(model: &SpectralModel, sigma_minus_theta: f64, t: f64) -> f64 {
    let s = sigma_minus_theta;
    model
        .eigenvalues
        .iter()
        .map(|&l| l.powf(-s) * (-(-l * t).exp_m1()) * t.powf(-s))
        .fold(0.0, f64::max)
}

/// Max ratio of ‖S(t−r)−S(t−q)‖ (as a map V_δ → V_γ, diagonal coordinates) to
/// the envelope (r−q)^a (t−r)^{−a−g}, sampled over strictly ordered triples
/// q < r < t drawn from `n_axis` levels on [0, horizon].
pub fn four_point_difference_ratio(
    model: &SpectralModel,
    a: f64,
    gamma_minus_delta: f64,
    n_axis: usize,
    horizon: f64,
) -> f64 {
    let g = gamma_minus_delta;
    let levels: Vec<f64> = (0..n_axis)
        .map(|k| (k as f64 + 0.5) / n_axis as f64 * horizon)
        .collect();
    let mut worst: f64 = 0.0;
    for (iq, &q) in levels.iter().enumerate() {
        for (ir, &r) in levels.iter().enumerate().skip(iq + 1) {
            for &t in levels.iter().skip(ir + 1) {
                let left = model
                    .eigenvalues
                    .iter()
                    .map(|&l| l.powf(g) * ((-l * (t - r)).exp() - (-l * (t - q)).exp()).abs())
                    .fold(0.0, f64::max);
                let envelope = (r - q).powf(a) * (t - r).powf(-a - g);
                worst = worst.max(left / envelope);
            }
        }
    }
    worst
}

/// Max ratio of the mixed second difference
/// ‖S(t−r)−S(s−r)−S(t−q)+S(s−q)‖ (diagonal, unweighted) to the envelope
/// (t−s)^b (r−q)^{2b} (s−r)^{−3b}, over strictly ordered quadruples
/// q < r < s < t from `n_axis` levels on [0, horizon].
pub fn four_point_double_ratio(model: &SpectralModel, b: f64, n_axis: usize, horizon: f64) -> f64 {
    let levels: Vec<f64> = (0..n_axis)
        .map(|k| (k as f64 + 0.5) / n_axis as f64 * horizon)
        .collect();
    let mut worst: f64 = 0.0;
    for (iq, &q) in levels.iter().enumerate() {
        for (ir, &r) in levels.iter().enumerate().skip(iq + 1) {
            for (is, &s) in levels.iter().enumerate().skip(ir + 1) {
                for &t in levels.iter().skip(is + 1) {
                    let left = model
                        .eigenvalues
                        .iter()
                        .map(|&l| {
                            ((-l * (t - r)).exp() - (-l * (s - r)).exp() - (-l * (t - q)).exp()
                                + (-l * (s - q)).exp())
                            .abs()
                        })
                        .fold(0.0, f64::max);
                    let envelope = (t - s).powf(b) * (r - q).powf(2.0 * b) * (s - r).powf(-3.0 * b);
                    worst = worst.max(left / envelope);
                }
            }
        }
    }
    worst
}

/// One measured constant: which estimate, at which exponent, and the max over
/// the sampled time grid.
#[derive(Debug, Clone)]
pub struct MeasuredConstant {
    pub label: String,
    pub exponent: f64,
    pub value: f64,
}

/// Measured constants for the two smoothing estimates over a time grid plus
/// the two four-point inequalities on a simplex sample.
#[derive(Debug, Clone)]
pub struct EstimateSuite {
    /// sup_i λ_i^{g} e^{−λ_i t} t^{g}, maximized over the t grid, per g.
    pub smoothing: Vec<MeasuredConstant>,
    /// sup_i λ_i^{−s}(1−e^{−λ_i t}) t^{−s}, maximized over the t grid, per s.
    pub hold: Vec<MeasuredConstant>,
    /// Max ratio for the two-term semigroup difference (exponent = α).
    pub four_point_difference: MeasuredConstant,
    /// Max ratio for the mixed second difference (exponent = β).
    pub four_point_double: MeasuredConstant,
}

/// Measure all smoothing constants on the supplied time grid. The four-point
/// ratios use α and β from `params` and a fixed 12-level simplex on [0, 1].
pub fn estimate_suite(model: &SpectralModel, params: &HolderParams, t_grid: &[f64]) -> Result<EstimateSuite> {
    if t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::domain("estimate_suite needs strictly positive times"));
    }
    let smoothing_exponents = [0.0, 0.25, 0.5, 0.75, 1.0];
    let hold_exponents = [0.0, 0.25, 0.5, 0.75, 1.0];
    let smoothing = smoothing_exponents
        .iter()
        .map(|&g| MeasuredConstant {
            label: format!("semigroup smoothing, gamma-delta = {g}"),
            exponent: g,
            value: t_grid
                .iter()
                .map(|&t| smoothing_constant_at(model, g, t))
                .fold(0.0, f64::max),
        })
        .collect();
    let hold = hold_exponents
        .iter()
        .map(|&s| MeasuredConstant {
            label: format!("semigroup hold, sigma-theta = {s}"),
            exponent: s,
            value: t_grid
                .iter()
                .map(|&t| hold_constant_at(model, s, t))
                .fold(0.0, f64::max),
        })
        .collect();
    let four_point_difference = MeasuredConstant {
        label: "four-point difference ratio".into(),
        exponent: params.alpha,
        value: four_point_difference_ratio(model, params.alpha, 0.0, 12, 1.0),
    };
    let four_point_double = MeasuredConstant {
        label: "four-point mixed second difference ratio".into(),
        exponent: params.beta,
        value: four_point_double_ratio(model, params.beta, 12, 1.0),
    };
    Ok(EstimateSuite {
        smoothing,
        hold,
        four_point_difference,
        four_point_double,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn laplacian_eigenvalues() {
        let model = laplacian_model(1, 0.75).unwrap();
        assert!((model.eigenvalues()[0] - PI * PI).abs() < 1e-12);
        let model = laplacian_model(3, 0.75).unwrap();
        for (i, &l) in model.eigenvalues().iter().enumerate() {
            let idx = (i + 1) as f64;
            // Ratios λ_i / i² equal π² exactly: both factors are exact squares.
            assert_eq!(l / (idx * idx), PI * PI);
        }
    }

    #[test]
    fn trace_delta_direct_arithmetic() {
        let model = laplacian_model(2, 0.75).unwrap();
        let expect = (PI * PI).powf(-1.5) + (4.0 * PI * PI).powf(-1.5);
        assert!((model.trace_delta() - expect).abs() < 1e-15);
    }

    #[test]
    fn semigroup_identity_at_zero_and_decay() {
        let model = SpectralModel::new(vec![1.0, 4.0], 0.5).unwrap();
        let x = vec![1.0, 1.0];
        assert_eq!(semigroup_apply(&model, 0.0, &x).unwrap(), x);
        let y = semigroup_apply(&model, 1.0, &x).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((y[1] - (-4.0f64).exp()).abs() < 1e-15);
        assert!(semigroup_apply(&model, -0.1, &x).is_err());
    }

    #[test]
    fn semigroup_composition() {
        let model = laplacian_model(4, 0.75).unwrap();
        let x = vec![0.3, -1.2, 0.7, 2.5];
        let once = semigroup_apply(&model, 0.05 + 0.02, &x).unwrap();
        let twice = semigroup_apply(&model, 0.02, &semigroup_apply(&model, 0.05, &x).unwrap()).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn fractional_norm_examples() {
        let model = SpectralModel::new(vec![2.0, 5.0], 0.75).unwrap();
        assert!((fractional_norm(&model, 0.0, &[3.0, 4.0]) - 5.0).abs() < 1e-15);
        let e1 = [1.0, 0.0];
        assert!((fractional_norm(&model, 0.75, &e1) - 2.0f64.powf(0.75)).abs() < 1e-15);
    }

    #[test]
    fn fractional_norm_monotone_in_exponent_for_large_eigenvalues() {
        let model = SpectralModel::new(vec![1.0, 3.0, 10.0], 0.5).unwrap();
        let x = [0.4, -0.2, 0.9];
        let mut prev = 0.0;
        for k in 0..=8 {
            let norm = fractional_norm(&model, k as f64 * 0.25, &x);
            assert!(norm >= prev);
            prev = norm;
        }
    }

    #[test]
    fn semigroup_contracts_every_fractional_norm() {
        let model = laplacian_model(5, 0.75).unwrap();
        let x = vec![0.3, -1.2, 0.7, 2.5, -0.1];
        for &t in &[1e-4, 0.01, 0.3, 1.0] {
            let y = semigroup_apply(&model, t, &x).unwrap();
            for &exponent in &[0.0, 0.25, 0.75, 1.0] {
                assert!(fractional_norm(&model, exponent, &y) <= fractional_norm(&model, exponent, &x));
            }
        }
    }

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn smoothing_constants_respect_calculus_bounds() {
        let model = laplacian_model(8, 0.75).unwrap();
        let limit = (0.5f64 / std::f64::consts::E).sqrt();
        for &t in &log_grid(1e-6, 1.0, 60) {
            assert!(smoothing_constant_at(&model, 0.0, t) <= 1.0);
            assert!(smoothing_constant_at(&model, 0.5, t) <= limit + 1e-12);
            assert!(hold_constant_at(&model, 1.0, t) <= 1.0);
        }
    }

    #[test]
    fn estimate_suite_is_finite_and_bounded() {
        let model = laplacian_model(6, 0.75).unwrap();
        let params = HolderParams::reference();
        let suite = estimate_suite(&model, &params, &log_grid(1e-6, 1.0, 40)).unwrap();
        for row in suite.smoothing.iter().chain(&suite.hold) {
            assert!(row.value.is_finite());
            // Continuum envelope (g/e)^g bounds every measured smoothing value.
            if row.label.starts_with("semigroup smoothing") && row.exponent > 0.0 {
                let env = (row.exponent / std::f64::consts::E).powf(row.exponent);
                assert!(row.value <= env + 1e-12, "{}: {} > {}", row.label, row.value, env);
            }
        }
        assert!(suite.four_point_difference.value.is_finite());
        assert!(suite.four_point_double.value.is_finite());
        assert!(suite.four_point_difference.value > 0.0);
        assert!(suite.four_point_double.value > 0.0);
    }
}
