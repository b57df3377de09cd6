//! Shared numeric kernels: exponential segment moments and cached power /
//! decay tables.
//!
//! Every convolved quantity in this crate is assembled from integrals of
//! `exp(-lambda*tau)` times low-degree polynomials over single grid segments.
//! The three moments here have removable singularities at `lambda == 0`; we
//! switch to truncated series below a small `lambda*h` threshold so the
//! degenerate case (plain Lévy areas, heat semigroup with a zero mode) is the
//! *same code path* with exact values `h` and `h^2/2`, not a special case in
//! the callers.

/// `∫_0^h exp(-λτ) dτ`. Exactly `h` when `λ == 0`.
pub fn e0(lambda: f64, h: f64) -> f64 {
    if lambda == 0.0 {
        h
    } else {
        -f64::exp_m1(-lambda * h) / lambda
    }
}

/// `∫_0^h e0(λ, τ) dτ = (h - e0(λ,h))/λ`. Exactly `h²/2` when `λ == 0`.
///
/// The subtraction loses precision once `λh` is small, so below `1e-2` the
/// value comes from the alternating series `h²·Σ (-λh)^n / (n+2)!/(n+1)⁻¹`…
/// truncated where the tail drops under 1e-16 relative.
pub fn e1(lambda: f64, h: f64) -> f64 {
    let x = lambda * h;
    if x.abs() < 1e-2 {
        let c = 1.0 / 2.0 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0 + x * x * x * x / 720.0
            - x * x * x * x * x / 5040.0;
        h * h * c
    } else {
        (h - e0(lambda, h)) / lambda
    }
}

/// `∫_0^h τ·exp(-λτ) dτ = (e0(λ,h) - h·exp(-λh))/λ`. Exactly `h²/2` at `λ == 0`.
///
/// First moment weighted toward the decaying end; shows up when a linear
/// driver segment multiplies a semigroup tail. Series branch as in [`e1`].
pub fn e1r(lambda: f64, h: f64) -> f64 {
    let x = lambda * h;
    if x.abs() < 1e-2 {
        let c = 1.0 / 2.0 - x / 3.0 + x * x / 8.0 - x * x * x / 30.0 + x * x * x * x / 144.0
            - x * x * x * x * x / 840.0;
        h * h * c
    } else {
        (e0(lambda, h) - h * (-x).exp()) / lambda
    }
}

/// `∫_0^h τ·e0(λ, τ) dτ = (h²/2 - e1r(λ,h))/λ`. Exactly `h³/3` at `λ == 0`.
///
/// First moment of the running filter; appears when a linear state segment
/// multiplies a left-anchored convolved driver increment. Series branch as
/// in [`e1`].
pub fn e1m(lambda: f64, h: f64) -> f64 {
    let x = lambda * h;
    if x.abs() < 1e-2 {
        let c = 1.0 / 3.0 - x / 8.0 + x * x / 30.0 - x * x * x / 144.0 + x * x * x * x / 840.0;
        h * h * h * c
    } else {
        (h * h / 2.0 - e1r(lambda, h)) / lambda
    }
}

/// Γ(x) for strictly positive arguments (all fractional-order prefactors in
/// this crate live in (0, 3)).
pub fn gamma_pos(x: f64) -> f64 {
    assert!(x > 0.0, "gamma_pos requires a positive argument, got {x}");
    statrs::function::gamma::ln_gamma(x).exp()
}

/// Cached powers `(k·h)^p` for `k = 0..=n`.
///
/// The kernel quadratures index these inside O(N²) loops; hoisting the
/// `powf` calls is the single biggest constant-factor win in the crate.
/// Entry 0 follows IEEE semantics (`0^p = +∞` for negative `p`); callers with
/// singular exponents never index it.
pub struct PowTable {
    values: Vec<f64>,
}

impl PowTable {
    pub fn new(p: f64, h: f64, n: usize) -> Self {
        let values = (0..=n).map(|k| (k as f64 * h).powf(p)).collect();
        Self { values }
    }

    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Cached semigroup decay factors `exp(-λ_i · k·h)` for every mode `i` and
/// lag `k = 0..=n`.
pub struct DecayTable {
    n_lags: usize,
    values: Vec<f64>,
}

impl DecayTable {
    pub fn new(eigenvalues: &[f64], h: f64, n_steps: usize) -> Self {
        let n_lags = n_steps + 1;
        let mut values = Vec::with_capacity(eigenvalues.len() * n_lags);
        for &lam in eigenvalues {
            for k in 0..n_lags {
                values.push((-lam * k as f64 * h).exp());
            }
        }
        Self { n_lags, values }
    }

    /// `exp(-λ_mode · k·h)`.
    #[inline]
    pub fn at(&self, mode: usize, k: usize) -> f64 {
        self.values[mode * self.n_lags + k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e0_matches_closed_forms() {
        assert!((e0(1.0, 1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(e0(0.0, 0.25), 0.25);
        // Small-argument behavior: e0 ≈ h(1 - x/2 + x²/6).
        let (lam, h) = (1e-9, 2.0);
        let x = lam * h;
        let approx = h * (1.0 - x / 2.0 + x * x / 6.0);
        assert!((e0(lam, h) - approx).abs() / approx < 1e-15);
    }

    #[test]
    fn e1_matches_closed_forms() {
        // (h - e0)/λ at λ=1, h=1 is exactly e^{-1}.
        assert!((e1(1.0, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(e1(0.0, 0.5), 0.125);
    }

    #[test]
    fn e1r_matches_closed_forms() {
        // ∫_0^1 τ e^{-τ} dτ = 1 - 2/e.
        assert!((e1r(1.0, 1.0) - (1.0 - 2.0 * (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(e1r(0.0, 0.5), 0.125);
    }

    #[test]
    fn e1m_matches_closed_forms() {
        // ∫_0^1 τ(1-e^{-τ}) dτ = 1/2 - (1 - 2/e) = 2/e - 1/2.
        let exact = 2.0 * (-1.0f64).exp() - 0.5;
        assert!((e1m(1.0, 1.0) - exact).abs() < 1e-15);
        assert!((e1m(0.0, 0.5) - 0.125 / 3.0).abs() < 1e-17);
    }

    #[test]
    fn series_and_direct_branches_agree_at_the_crossover() {
        // Straddle the λh = 1e-2 switch; both branches carry ≥ 12 digits there.
        for &(lam, h) in &[(0.99e-2, 1.0), (1.01e-2, 1.0), (0.5e-2, 2.001), (2.0, 0.00499)] {
            let direct1 = (h - e0(lam, h)) / lam;
            assert!((e1(lam, h) - direct1).abs() / direct1 < 1e-12, "e1 at λh={}", lam * h);
            let direct2 = (e0(lam, h) - h * (-lam * h).exp()) / lam;
            assert!((e1r(lam, h) - direct2).abs() / direct2 < 1e-12, "e1r at λh={}", lam * h);
            let direct3 = (h * h / 2.0 - e1r(lam, h)) / lam;
            assert!((e1m(lam, h) - direct3).abs() / direct3 < 1e-12, "e1m at λh={}", lam * h);
        }
    }

    #[test]
    fn moment_identity_links_the_three() {
        // ∫τ e^{-λτ} + λ⁻¹-free identity: e1r(λ,h) + e1(λ,h) = h·e0... not in
        // general; instead check d/dh relations numerically: e0' = e^{-λh}.
        let (lam, h, dh) = (3.0, 0.7, 1e-6);
        let d = (e0(lam, h + dh) - e0(lam, h - dh)) / (2.0 * dh);
        assert!((d - (-lam * h).exp()).abs() < 1e-9);
        let d1 = (e1(lam, h + dh) - e1(lam, h - dh)) / (2.0 * dh);
        assert!((d1 - e0(lam, h)).abs() < 1e-9);
        let d2 = (e1r(lam, h + dh) - e1r(lam, h - dh)) / (2.0 * dh);
        assert!((d2 - h * (-lam * h).exp()).abs() < 1e-9);
    }

    #[test]
    fn gamma_pos_reference_values() {
        assert!((gamma_pos(1.0) - 1.0).abs() < 1e-14);
        assert!((gamma_pos(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-14);
        assert!((gamma_pos(2.5) - 1.5 * 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn pow_table_matches_powf() {
        let t = PowTable::new(-0.665, 0.03125, 64);
        for k in 1..=64 {
            assert_eq!(t.at(k), (k as f64 * 0.03125f64).powf(-0.665));
        }
        assert!(t.at(0).is_infinite());
        let ones = PowTable::new(0.0, 0.1, 8);
        for k in 0..=8 {
            assert_eq!(ones.at(k), 1.0);
        }
    }

    #[test]
    fn decay_table_matches_exp() {
        let lams = [1.0, 9.8696, 39.478];
        let t = DecayTable::new(&lams, 0.125, 16);
        for (i, &lam) in lams.iter().enumerate() {
            for k in 0..=16 {
                assert_eq!(t.at(i, k), (-lam * k as f64 * 0.125).exp());
            }
        }
    }
}
