//! Diffusion coefficients `G: V → L₂(V, V_δ)` with three bounded
//! derivatives: the directional-derivative interface, two concrete families
//! (a weighted lattice composition and a smoothing integral kernel in the
//! sine basis), Hilbert–Schmidt norms with spectral `δ`-weights, and a
//! randomized checker for the mean-value inequalities the fixed-point
//! estimates rely on.
//!
//! Derivatives are exposed directionally — `dvalue(u, h)` is the matrix of
//! `DG(u)(h, ·)`, and similarly for the second and third derivatives after
//! contraction with given vectors. The evolution formulas only ever consume
//! contracted forms, and this keeps storage at `m²` regardless of the
//! derivative order. Full tensors, where a norm needs one, are reassembled
//! from `m` directional calls at basis vectors.

use crate::spectral::SpectralModel;
use crate::{Error, Result};

/// Scalar activation with hand-coded derivatives and known sup-norms
/// `sup[k] = |σ⁽ᵏ⁾|_∞` (index 0 is the function itself). The sups feed the
/// analytic bound constants, so they must genuinely dominate.
#[derive(Clone, Copy)]
pub struct Activation {
    pub f: fn(f64) -> f64,
    pub d1: fn(f64) -> f64,
    pub d2: fn(f64) -> f64,
    pub d3: fn(f64) -> f64,
    pub sup: [f64; 4],
}

impl Activation {
    /// Hyperbolic tangent. `σ′ = 1−σ²` gives the closed derivative chain;
    /// the sup of the third derivative is attained at the origin.
    pub fn tanh() -> Self {
        Activation {
            f: |s| s.tanh(),
            d1: |s| {
                let t = s.tanh();
                1.0 - t * t
            },
            d2: |s| {
                let t = s.tanh();
                -2.0 * t * (1.0 - t * t)
            },
            d3: |s| {
                let t = s.tanh();
                (1.0 - t * t) * (6.0 * t * t - 2.0)
            },
            sup: [1.0, 1.0, 4.0 / (3.0 * 3.0f64.sqrt()), 2.0],
        }
    }

    /// The zero activation: turns any instance into `G ≡ 0`.
    pub fn zero() -> Self {
        Activation {
            f: |_| 0.0,
            d1: |_| 0.0,
            d2: |_| 0.0,
            d3: |_| 0.0,
            sup: [0.0; 4],
        }
    }

    /// The identity, for closed-form linear oracles. Unbounded, so the
    /// function sup is infinite and instances built on it report infinite
    /// zeroth bounds; the derivative chain is still exact.
    pub fn linear() -> Self {
        Activation {
            f: |s| s,
            d1: |_| 1.0,
            d2: |_| 0.0,
            d3: |_| 0.0,
            sup: [f64::INFINITY, 1.0, 0.0, 0.0],
        }
    }
}

/// Diffusion coefficient interface. Matrices are `m×m` row-major with
/// `out[i*m + j]` the coefficient of `e_i` in `G(u)e_j`; derivative calls
/// contract the extra slots with the supplied directions.
pub trait Nonlinearity {
    /// State dimension `m`.
    fn dim(&self) -> usize;
    /// `G(u)` as a coefficient matrix.
    fn value(&self, u: &[f64], out: &mut [f64]);
    /// `DG(u)(h, ·)`, linear in `h`.
    fn dvalue(&self, u: &[f64], h: &[f64], out: &mut [f64]);
    /// `D²G(u)(h₁, h₂, ·)`, symmetric bilinear.
    fn d2value(&self, u: &[f64], h1: &[f64], h2: &[f64], out: &mut [f64]);
    /// `D³G(u)(h₁, h₂, h₃, ·)`, symmetric trilinear.
    fn d3value(&self, u: &[f64], h1: &[f64], h2: &[f64], h3: &[f64], out: &mut [f64]);
    /// `(c_G, c_DG, c_D²G, c_D³G)`: bounds on the value and the three
    /// derivatives in the δ-weighted Hilbert–Schmidt norms.
    fn bounds(&self) -> (f64, f64, f64, f64);
}

/// δ-weighted Hilbert–Schmidt norm `sqrt(Σ_ij λ_i^{2δ} M_ij²)` of an `m×m`
/// coefficient matrix; the weights are `λ_i^{2δ}` row factors.
pub fn hs_norm_delta(mat: &[f64], m: usize, lambda2delta: &[f64]) -> f64 {
    assert_eq!(mat.len(), m * m);
    assert_eq!(lambda2delta.len(), m);
    let mut acc = 0.0;
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..m {
            let x = mat[i * m + j];
            row += x * x;
        }
        acc += lambda2delta[i] * row;
    }
    acc.sqrt()
}

/// `λ_i^{2δ}` row weights for a spectral model.
pub fn delta_weights(model: &SpectralModel) -> Vec<f64> {
    let p = 2.0 * model.delta();
    model.eigenvalues().iter().map(|l| l.powf(p)).collect()
}

// ---------------------------------------------------------------------------
// Lattice instance
// ---------------------------------------------------------------------------

/// Lattice composition `g_ij(u) = κ_ij σ(u_j)`: every coefficient reads one
/// state coordinate through the activation, weighted by a summable array.
/// All derivatives are diagonal in the direction index, which makes the
/// bound constants exact closed forms.
pub struct LatticeNonlinearity {
    m: usize,
    kappa: Vec<f64>,
    act: Activation,
    /// `Σ_ij λ_i^{2δ} κ_ij²` — the weight mass behind every bound constant.
    mass: f64,
}

/// Lattice instance with the default geometric weights
/// `κ_ij = κ₀ 2^{−(i+j)}` (1-based exponents).
pub fn lattice_nonlinearity(
    model: &SpectralModel,
    kappa0: f64,
    act: Activation,
) -> LatticeNonlinearity {
    let m = model.m();
    let mut kappa = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            kappa[i * m + j] = kappa0 * 0.5f64.powi((i + j + 2) as i32);
        }
    }
    lattice_with_weights(model, kappa, act).expect("default weights have matching dimension")
}

/// Lattice instance with explicit weights (row-major `m×m`).
pub fn lattice_with_weights(
    model: &SpectralModel,
    kappa: Vec<f64>,
    act: Activation,
) -> Result<LatticeNonlinearity> {
    let m = model.m();
    if kappa.len() != m * m {
        return Err(Error::domain(format!(
            "weight array has {} entries, expected {}",
            kappa.len(),
            m * m
        )));
    }
    let w = delta_weights(model);
    let mut mass = 0.0;
    for i in 0..m {
        for j in 0..m {
            mass += w[i] * kappa[i * m + j] * kappa[i * m + j];
        }
    }
    Ok(LatticeNonlinearity { m, kappa, act, mass })
}

impl LatticeNonlinearity {
    /// The δ-weighted square mass of the weights, reported so callers can
    /// see the magnitude that enters every bound.
    pub fn weight_mass(&self) -> f64 {
        self.mass
    }

    fn fill(&self, u: &[f64], deriv: fn(f64) -> f64, dirs: &[&[f64]], out: &mut [f64]) {
        let m = self.m;
        assert_eq!(u.len(), m);
        assert_eq!(out.len(), m * m);
        for j in 0..m {
            let mut s = deriv(u[j]);
            for d in dirs {
                assert_eq!(d.len(), m);
                s *= d[j];
            }
            for i in 0..m {
                out[i * m + j] = self.kappa[i * m + j] * s;
            }
        }
    }
}

impl Nonlinearity for LatticeNonlinearity {
    fn dim(&self) -> usize {
        self.m
    }

    fn value(&self, u: &[f64], out: &mut [f64]) {
        self.fill(u, self.act.f, &[], out);
    }

    fn dvalue(&self, u: &[f64], h: &[f64], out: &mut [f64]) {
        self.fill(u, self.act.d1, &[h], out);
    }

    fn d2value(&self, u: &[f64], h1: &[f64], h2: &[f64], out: &mut [f64]) {
        self.fill(u, self.act.d2, &[h1, h2], out);
    }

    fn d3value(&self, u: &[f64], h1: &[f64], h2: &[f64], h3: &[f64], out: &mut [f64]) {
        self.fill(u, self.act.d3, &[h1, h2, h3], out);
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let s = self.mass.sqrt();
        (
            s * self.act.sup[0],
            s * self.act.sup[1],
            s * self.act.sup[2],
            s * self.act.sup[3],
        )
    }
}

// ---------------------------------------------------------------------------
// Integral-kernel instance
// ---------------------------------------------------------------------------

/// Integral-kernel coefficient on the unit interval in the sine basis
/// `φ_i(x) = √2 sin(iπx)`:
///
/// `G(u)v[x] = ∫ g(x, u(y)) v(y) dy` with `g(x, s) = profile(x)·σ(s)`,
///
/// so the Galerkin matrix is the rank-one product
/// `M_ij(u) = â_i ∫ σ(u(y)) φ_j(y) dy` with `â_i = ∫ φ_i profile dx`.
/// Derivatives replace `σ` by its derivatives times direction functions.
/// Integrals use composite four-point Gauss quadrature.
///
/// Bound constants are analytic at the truncation level: with
/// `A_δ = sqrt(Σ λ_i^{2δ} â_i²)` and Bessel plus `Σ_k φ_k² ≤ 2m`,
/// `c_G = A_δ|σ|_∞`, `c_DG = A_δ|σ′|_∞ √(2m)`, `c_D²G = A_δ|σ″|_∞ (2m)`,
/// `c_D³G = A_δ|σ‴|_∞ (2m)^{3/2}`. The m-growth is the expected truncation
/// trend of multiplication-type bilinear maps and is reported, not hidden.
pub struct KernelNonlinearity {
    m: usize,
    act: Activation,
    /// Quadrature nodes over [0,1] and their weights.
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `φ_i` sampled at the nodes, row per mode.
    phi: Vec<f64>,
    /// Profile coefficients `â_i`.
    ahat: Vec<f64>,
    a_delta: f64,
}

/// Builds the kernel instance. `resolution` is the number of quadrature
/// subintervals (four Gauss nodes each) and must be at least two per sine
/// mode to resolve the basis oscillation.
pub fn kernel_nonlinearity(
    model: &SpectralModel,
    profile: fn(f64) -> f64,
    act: Activation,
    resolution: usize,
) -> Result<KernelNonlinearity> {
    let m = model.m();
    if resolution < 2 * m {
        return Err(Error::domain(format!(
            "quadrature resolution {resolution} is below two subintervals per mode (m = {m})"
        )));
    }
    // Four-point Gauss–Legendre abscissae and weights on [-1, 1].
    const GX: [f64; 4] = [
        -0.8611363115940526,
        -0.3399810435848563,
        0.3399810435848563,
        0.8611363115940526,
    ];
    const GW: [f64; 4] = [
        0.3478548451374538,
        0.6521451548625461,
        0.6521451548625461,
        0.3478548451374538,
    ];
    let hq = 1.0 / resolution as f64;
    let mut nodes = Vec::with_capacity(4 * resolution);
    let mut weights = Vec::with_capacity(4 * resolution);
    for c in 0..resolution {
        let mid = (c as f64 + 0.5) * hq;
        for p in 0..4 {
            nodes.push(mid + 0.5 * hq * GX[p]);
            weights.push(0.5 * hq * GW[p]);
        }
    }
    let nq = nodes.len();
    let mut phi = vec![0.0; m * nq];
    for i in 0..m {
        let freq = (i + 1) as f64 * std::f64::consts::PI;
        for (t, &y) in nodes.iter().enumerate() {
            phi[i * nq + t] = std::f64::consts::SQRT_2 * (freq * y).sin();
        }
    }
    let mut ahat = vec![0.0; m];
    for i in 0..m {
        let mut acc = 0.0;
        for t in 0..nq {
            acc += weights[t] * phi[i * nq + t] * profile(nodes[t]);
        }
        ahat[i] = acc;
    }
    let w = delta_weights(model);
    let a_delta = ahat
        .iter()
        .zip(&w)
        .map(|(a, wi)| wi * a * a)
        .sum::<f64>()
        .sqrt();
    Ok(KernelNonlinearity {
        m,
        act,
        nodes,
        weights,
        phi,
        ahat,
        a_delta,
    })
}

impl KernelNonlinearity {
    /// `b_j = ∫ σ⁽ᵖ⁾(u(y))·(direction functions)(y)·φ_j(y) dy`, then the
    /// rank-one assembly `out_ij = â_i b_j`.
    fn fill(&self, u: &[f64], deriv: fn(f64) -> f64, dirs: &[&[f64]], out: &mut [f64]) {
        let m = self.m;
        assert_eq!(u.len(), m);
        assert_eq!(out.len(), m * m);
        for d in dirs {
            assert_eq!(d.len(), m);
        }
        let nq = self.nodes.len();
        let mut b = vec![0.0; m];
        for t in 0..nq {
            let mut s = 0.0;
            for k in 0..m {
                s += u[k] * self.phi[k * nq + t];
            }
            let mut f = deriv(s);
            for d in dirs {
                let mut dv = 0.0;
                for k in 0..m {
                    dv += d[k] * self.phi[k * nq + t];
                }
                f *= dv;
            }
            let wf = self.weights[t] * f;
            for j in 0..m {
                b[j] += wf * self.phi[j * nq + t];
            }
        }
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = self.ahat[i] * b[j];
            }
        }
    }
}

impl Nonlinearity for KernelNonlinearity {
    fn dim(&self) -> usize {
        self.m
    }

    fn value(&self, u: &[f64], out: &mut [f64]) {
        self.fill(u, self.act.f, &[], out);
    }

    fn dvalue(&self, u: &[f64], h: &[f64], out: &mut [f64]) {
        self.fill(u, self.act.d1, &[h], out);
    }

    fn d2value(&self, u: &[f64], h1: &[f64], h2: &[f64], out: &mut [f64]) {
        self.fill(u, self.act.d2, &[h1, h2], out);
    }

    fn d3value(&self, u: &[f64], h1: &[f64], h2: &[f64], h3: &[f64], out: &mut [f64]) {
        self.fill(u, self.act.d3, &[h1, h2, h3], out);
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let tm = 2.0 * self.m as f64;
        (
            self.a_delta * self.act.sup[0],
            self.a_delta * self.act.sup[1] * tm.sqrt(),
            self.a_delta * self.act.sup[2] * tm,
            self.a_delta * self.act.sup[3] * tm.powf(1.5),
        )
    }
}

// ---------------------------------------------------------------------------
// Inequality suite
// ---------------------------------------------------------------------------

/// Result of the randomized inequality checks: per-display maxima of
/// left/right ratios over all trials. Displays 1–6 are the value and
/// first-derivative estimates (boundedness, two Lipschitz bounds, the
/// Taylor remainder, and the two four-point bounds); display 7 is the
/// second-order four-point bound. All must stay at or below one when the
/// bound constants are correct.
#[derive(Debug, Clone)]
pub struct InequalityReport {
    pub trials: usize,
    pub ratios: [f64; 7],
}

impl InequalityReport {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().fold(0.0f64, |a, &r| a.max(r))
    }
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn unit01(state: &mut u64) -> f64 {
    (splitmix(state) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw from the unit ball (componentwise uniform, rescaled into
/// the ball when outside).
fn draw_ball(state: &mut u64, m: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m).map(|_| 2.0 * unit01(state) - 1.0).collect();
    let n = crate::series::norm2(&v);
    if n > 1.0 {
        for x in &mut v {
            *x /= n;
        }
    }
    v
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Left/right ratio of a display. A vanishing right side means the exact
/// left side is zero too; anything at the instance's rounding scale
/// (`floor`) is treated as that zero rather than reported as infinite.
fn ratio(lhs: f64, rhs: f64, floor: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs <= floor {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Full first-derivative tensor as `m` direction slabs of `m×m` matrices,
/// from basis-vector calls.
fn dg_tensor(g: &dyn Nonlinearity, u: &[f64]) -> Vec<f64> {
    let m = g.dim();
    let mut t = vec![0.0; m * m * m];
    let mut e = vec![0.0; m];
    for j in 0..m {
        e[j] = 1.0;
        g.dvalue(u, &e, &mut t[j * m * m..(j + 1) * m * m]);
        e[j] = 0.0;
    }
    t
}

fn hs3(t: &[f64], m: usize, w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..m {
        for i in 0..m {
            let mut row = 0.0;
            for k in 0..m {
                let x = t[j * m * m + i * m + k];
                row += x * x;
            }
            acc += w[i] * row;
        }
    }
    acc.sqrt()
}

/// Checks the mean-value estimates on randomized quadruples drawn from the
/// unit ball. Every display compares a δ-weighted Hilbert–Schmidt norm of
/// value or derivative combinations against its bound-constant right side;
/// since the estimates are theorems whenever the reported constants really
/// dominate, any ratio above one indicates a defect in the instance.
pub fn inequality_suite(
    g: &dyn Nonlinearity,
    model: &SpectralModel,
    trials: usize,
    seed: u64,
) -> InequalityReport {
    let m = g.dim();
    assert_eq!(model.m(), m, "model dimension must match the instance");
    let w = delta_weights(model);
    let (cg, cdg, cd2g, cd3g) = g.bounds();
    let fin = |x: f64| if x.is_finite() { x } else { 0.0 };
    let floor = 1e-12 * (1.0 + fin(cg) + fin(cdg) + fin(cd2g) + fin(cd3g));
    let mut state = seed ^ 0xa076_1d64_78bd_642f;
    let mut ratios = [0.0f64; 7];
    let mut mat = vec![0.0; m * m];
    let mut scratch = vec![0.0; m * m];
    for _ in 0..trials {
        let u1 = draw_ball(&mut state, m);
        let u2 = draw_ball(&mut state, m);
        let v1 = draw_ball(&mut state, m);
        let v2 = draw_ball(&mut state, m);
        let du = sub(&u1, &u2);
        let dv = sub(&v1, &v2);
        let d_cross = sub(&u1, &v1);
        let d_cross2 = sub(&u2, &v2);
        let d_mix = sub(&d_cross, &d_cross2); // u1−v1−(u2−v2)
        let n_du = crate::series::norm2(&du);
        let n_dv = crate::series::norm2(&dv);
        let n_c1 = crate::series::norm2(&d_cross);
        let n_c2 = crate::series::norm2(&d_cross2);
        let n_mix = crate::series::norm2(&d_mix);

        let mut gu1 = vec![0.0; m * m];
        let mut gu2 = vec![0.0; m * m];
        let mut gv1 = vec![0.0; m * m];
        let mut gv2 = vec![0.0; m * m];
        g.value(&u1, &mut gu1);
        g.value(&u2, &mut gu2);
        g.value(&v1, &mut gv1);
        g.value(&v2, &mut gv2);

        // 1: boundedness.
        ratios[0] = ratios[0].max(ratio(hs_norm_delta(&gu1, m, &w), cg, floor));

        // 2: Lipschitz in the value.
        for i in 0..m * m {
            mat[i] = gu1[i] - gv1[i];
        }
        ratios[1] = ratios[1].max(ratio(hs_norm_delta(&mat, m, &w), cdg * n_c1, floor));

        // 3: Lipschitz in the first derivative (full tensors).
        let tu1 = dg_tensor(g, &u1);
        let tv1 = dg_tensor(g, &v1);
        let mut tdiff: Vec<f64> = tu1.iter().zip(&tv1).map(|(a, b)| a - b).collect();
        ratios[2] = ratios[2].max(ratio(hs3(&tdiff, m, &w), cd2g * n_c1, floor));

        // 4: Taylor remainder.
        g.dvalue(&u2, &du, &mut scratch);
        for i in 0..m * m {
            mat[i] = gu1[i] - gu2[i] - scratch[i];
        }
        ratios[3] =
            ratios[3].max(ratio(hs_norm_delta(&mat, m, &w), cd2g * n_du * n_du, floor));

        // 5: four-point bound on values.
        for i in 0..m * m {
            mat[i] = gu1[i] - gv1[i] - gu2[i] + gv2[i];
        }
        ratios[4] = ratios[4].max(ratio(
            hs_norm_delta(&mat, m, &w),
            cdg * n_mix + cd2g * n_du * (n_c1 + n_c2),
            floor,
        ));

        // 6: four-point bound on first derivatives.
        let tu2 = dg_tensor(g, &u2);
        let tv2 = dg_tensor(g, &v2);
        for i in 0..m * m * m {
            tdiff[i] = tu1[i] - tv1[i] - tu2[i] + tv2[i];
        }
        ratios[5] = ratios[5].max(ratio(
            hs3(&tdiff, m, &w),
            cd2g * n_mix + cd3g * n_du * (n_c1 + n_c2),
            floor,
        ));

        // 7: second-order four-point bound on Taylor remainders.
        g.dvalue(&v2, &dv, &mut mat);
        for i in 0..m * m {
            scratch[i] = gu1[i] - gu2[i] - scratch[i] - (gv1[i] - gv2[i] - mat[i]);
        }
        ratios[6] = ratios[6].max(ratio(
            hs_norm_delta(&scratch, m, &w),
            cd2g * (n_du + n_dv) * n_mix + cd3g * n_dv * n_c2 * (n_du + n_mix),
            floor,
        ));
    }
    InequalityReport { trials, ratios }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::laplacian_model;

    fn model(m: usize) -> SpectralModel {
        laplacian_model(m, 0.25).unwrap()
    }

    fn fd_matrix(
        eval: impl Fn(&[f64], &mut [f64]),
        u: &[f64],
        dir: &[f64],
        m: usize,
        eps: f64,
    ) -> Vec<f64> {
        let up: Vec<f64> = u.iter().zip(dir).map(|(x, d)| x + eps * d).collect();
        let dn: Vec<f64> = u.iter().zip(dir).map(|(x, d)| x - eps * d).collect();
        let mut a = vec![0.0; m * m];
        let mut b = vec![0.0; m * m];
        eval(&up, &mut a);
        eval(&dn, &mut b);
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y) / (2.0 * eps))
            .collect()
    }

    fn assert_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
        let scale = want.iter().fold(1.0f64, |a, &x| a.max(x.abs()));
        for (g, w) in got.iter().zip(want) {
            assert!(
                (g - w).abs() <= tol * scale,
                "{what}: {g} vs {w} (scale {scale})"
            );
        }
    }

    #[test]
    fn lattice_closed_forms_on_a_small_case() {
        let md = model(2);
        let g = lattice_nonlinearity(&md, 1.0, Activation::tanh());
        let u = [0.3, -0.2];
        let mut v = vec![0.0; 4];
        g.value(&u, &mut v);
        // κ_ij = 2^{-(i+j)} with 1-based exponents.
        for i in 0..2 {
            for j in 0..2 {
                let kij = 0.5f64.powi((i + j + 2) as i32);
                assert!((v[i * 2 + j] - kij * u[j].tanh()).abs() < 1e-15);
            }
        }
        let h = [0.7, 0.1];
        let mut d = vec![0.0; 4];
        g.dvalue(&u, &h, &mut d);
        for i in 0..2 {
            for j in 0..2 {
                let kij = 0.5f64.powi((i + j + 2) as i32);
                let sp = 1.0 - u[j].tanh() * u[j].tanh();
                assert!((d[i * 2 + j] - kij * sp * h[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_activation_gives_the_zero_coefficient() {
        let md = model(3);
        let g = lattice_nonlinearity(&md, 2.0, Activation::zero());
        let mut v = vec![1.0; 9];
        g.value(&[0.4, -1.0, 0.2], &mut v);
        assert!(v.iter().all(|&x| x == 0.0));
        assert_eq!(g.bounds(), (0.0, 0.0, 0.0, 0.0));
        let k = kernel_nonlinearity(&md, |_| 0.0, Activation::tanh(), 12).unwrap();
        k.value(&[0.4, -1.0, 0.2], &mut v);
        assert!(v.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let md = model(4);
        let lat = lattice_nonlinearity(&md, 1.3, Activation::tanh());
        let ker = kernel_nonlinearity(
            &md,
            |x| (std::f64::consts::PI * x).sin(),
            Activation::tanh(),
            48,
        )
        .unwrap();
        let u = [0.31, -0.44, 0.12, 0.25];
        let h1 = [0.5, 0.2, -0.3, 0.15];
        let h2 = [-0.25, 0.6, 0.05, -0.4];
        let h3 = [0.1, -0.2, 0.45, 0.3];
        let eps = 1e-5;
        let m = 4;
        for g in [&lat as &dyn Nonlinearity, &ker as &dyn Nonlinearity] {
            let mut exact = vec![0.0; m * m];
            g.dvalue(&u, &h1, &mut exact);
            let fd = fd_matrix(|x, out| g.value(x, out), &u, &h1, m, eps);
            assert_close(&fd, &exact, 1e-6, "first derivative");

            g.d2value(&u, &h1, &h2, &mut exact);
            let fd = fd_matrix(|x, out| g.dvalue(x, &h1, out), &u, &h2, m, eps);
            assert_close(&fd, &exact, 1e-6, "second derivative");

            g.d3value(&u, &h1, &h2, &h3, &mut exact);
            let fd = fd_matrix(|x, out| g.d2value(x, &h1, &h2, out), &u, &h3, m, eps);
            assert_close(&fd, &exact, 1e-6, "third derivative");

            // Symmetry of the bilinear form.
            let mut ab = vec![0.0; m * m];
            let mut ba = vec![0.0; m * m];
            g.d2value(&u, &h1, &h2, &mut ab);
            g.d2value(&u, &h2, &h1, &mut ba);
            assert_close(&ab, &ba, 1e-14, "bilinear symmetry");
        }
    }

    #[test]
    fn bounds_dominate_sampled_norms() {
        let md = model(4);
        let lat = lattice_nonlinearity(&md, 1.1, Activation::tanh());
        let ker = kernel_nonlinearity(
            &md,
            |x| (std::f64::consts::PI * x).sin(),
            Activation::tanh(),
            48,
        )
        .unwrap();
        let w = delta_weights(&md);
        let mut state = 7u64;
        for g in [&lat as &dyn Nonlinearity, &ker as &dyn Nonlinearity] {
            let (cg, cdg, _, _) = g.bounds();
            let mut mat = vec![0.0; 16];
            let mut worst_g: f64 = 0.0;
            let mut worst_dg: f64 = 0.0;
            for _ in 0..1000 {
                // Spread draws well beyond the unit ball: the bounds are global.
                let mut u = draw_ball(&mut state, 4);
                for x in &mut u {
                    *x *= 5.0;
                }
                g.value(&u, &mut mat);
                worst_g = worst_g.max(hs_norm_delta(&mat, 4, &w));
                worst_dg = worst_dg.max(hs3(&dg_tensor(g, &u), 4, &w));
            }
            assert!(worst_g <= cg * (1.0 + 1e-12), "{worst_g} vs {cg}");
            assert!(worst_dg <= cdg * (1.0 + 1e-12), "{worst_dg} vs {cdg}");
        }
    }

    #[test]
    fn lattice_norm_is_permutation_invariant_for_flat_weights() {
        let md = model(3);
        let g = lattice_with_weights(&md, vec![0.4; 9], Activation::tanh()).unwrap();
        let w = delta_weights(&md);
        let mut a = vec![0.0; 9];
        let mut b = vec![0.0; 9];
        g.value(&[0.9, -0.3, 0.5], &mut a);
        g.value(&[0.5, 0.9, -0.3], &mut b);
        let na = hs_norm_delta(&a, 3, &w);
        let nb = hs_norm_delta(&b, 3, &w);
        assert!((na - nb).abs() < 1e-12 * na.max(1.0));
    }

    #[test]
    fn kernel_rejects_coarse_quadrature() {
        let md = model(4);
        assert!(kernel_nonlinearity(&md, |_| 1.0, Activation::tanh(), 7).is_err());
        assert!(kernel_nonlinearity(&md, |_| 1.0, Activation::tanh(), 8).is_ok());
    }

    #[test]
    fn kernel_linear_profile_reduces_to_a_rank_one_matrix() {
        // profile = first basis shape, linear activation, u = 0:
        // value(0) = 0 and dvalue(0,h)_ij = (1/√2)·δ_{i1}·h_j by sine
        // orthogonality.
        let md = model(4);
        let g = kernel_nonlinearity(
            &md,
            |x| (std::f64::consts::PI * x).sin(),
            Activation::linear(),
            48,
        )
        .unwrap();
        let u = [0.0; 4];
        let mut v = vec![0.0; 16];
        g.value(&u, &mut v);
        assert!(v.iter().all(|&x| x.abs() < 1e-13));
        let h = [0.8, -0.1, 0.3, 0.6];
        g.dvalue(&u, &h, &mut v);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == 0 {
                    h[j] / std::f64::consts::SQRT_2
                } else {
                    0.0
                };
                assert!(
                    (v[i * 4 + j] - want).abs() < 1e-12,
                    "entry ({i},{j}): {} vs {want}",
                    v[i * 4 + j]
                );
            }
        }
    }

    #[test]
    fn inequality_suite_ratios_stay_below_one() {
        let md = model(4);
        let zero = lattice_nonlinearity(&md, 1.0, Activation::zero());
        let r = inequality_suite(&zero, &md, 50, 1);
        assert!(r.max_ratio() == 0.0, "{:?}", r.ratios);

        let lat = lattice_nonlinearity(&md, 1.2, Activation::tanh());
        let r = inequality_suite(&lat, &md, 1000, 42);
        assert!(r.max_ratio() <= 1.0 + 1e-9, "{:?}", r.ratios);
        assert!(r.max_ratio() > 0.0);

        let ker = kernel_nonlinearity(
            &md,
            |x| (std::f64::consts::PI * x).sin(),
            Activation::tanh(),
            48,
        )
        .unwrap();
        let r = inequality_suite(&ker, &md, 1000, 43);
        assert!(r.max_ratio() <= 1.0 + 1e-9, "{:?}", r.ratios);
    }

    #[test]
    fn linear_lattice_taylor_remainders_vanish() {
        let md = model(3);
        let g = lattice_with_weights(&md, vec![0.3; 9], Activation::linear()).unwrap();
        // G affine ⇒ both Taylor-remainder displays are identically zero,
        // and the Lipschitz display is tight at ratio ≤ 1.
        let r = inequality_suite(&g, &md, 200, 9);
        assert!(r.ratios[3] < 1e-12, "{:?}", r.ratios);
        assert!(r.ratios[6] < 1e-12, "{:?}", r.ratios);
        assert!(r.ratios[1] <= 1.0 + 1e-12);
    }
}
