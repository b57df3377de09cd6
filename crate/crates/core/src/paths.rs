//! Grid-sampled paths, two-forms on the triangle, Hölder seminorms, and the
//! Chen consistency residual.
//!
//! A path u and a driver ω are coupled to a two-form v(s,t) — the discrete
//! stand-in for the iterated integral ∫_s^t (u(τ)−u(s)) ⊗ dω(τ) — through the
//! Chen equality
//!
//! ```text
//!     v(s,t) = v(s,r) + v(r,t) + (u(r)−u(s)) ⊗ (ω(t)−ω(r)),    s ≤ r ≤ t.
//! ```
//!
//! [`smooth_tensor`] builds the exact such v for piecewise-linear data;
//! [`chen_residual`] measures the worst violation over all grid triples. Both
//! are exercised constantly as consistency diagnostics for solver output.

use crate::series::{norm2, Series};
use crate::{Error, Result};

/// A V-valued path sampled on a uniform grid over [t0, t1]: node k carries the
/// m mode coefficients of the value at t0 + k·(t1−t0)/N.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    t0: f64,
    t1: f64,
    values: Series,
}

impl GridPath {
    /// Zero path with `n_steps` uniform steps and `m` modes.
    pub fn zeros(t0: f64, t1: f64, m: usize, n_steps: usize) -> Self {
        GridPath {
            t0,
            t1,
            values: Series::zeros(m, n_steps + 1),
        }
    }

    /// Builds a path by evaluating `f(node_index, time, out_modes)`.
    pub fn from_fn(
        t0: f64,
        t1: f64,
        m: usize,
        n_steps: usize,
        mut f: impl FnMut(usize, f64, &mut [f64]),
    ) -> Self {
        let mut p = GridPath::zeros(t0, t1, m, n_steps);
        for k in 0..=n_steps {
            let t = p.time(k);
            f(k, t, p.values.node_mut(k));
        }
        p
    }

    /// Scalar path from a closure of time.
    pub fn scalar_from_fn(t0: f64, t1: f64, n_steps: usize, mut f: impl FnMut(f64) -> f64) -> Self {
        GridPath::from_fn(t0, t1, 1, n_steps, |_, t, out| out[0] = f(t))
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    /// Number of grid steps N (nodes are 0..=N).
    pub fn n_steps(&self) -> usize {
        self.values.n_nodes() - 1
    }

    /// Modes per node.
    pub fn m(&self) -> usize {
        self.values.k
    }

    /// Grid spacing.
    pub fn h(&self) -> f64 {
        (self.t1 - self.t0) / self.n_steps() as f64
    }

    /// Time of node k, computed the same way everywhere so grids match bitwise.
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + (self.t1 - self.t0) * k as f64 / self.n_steps() as f64
    }

    #[inline]
    pub fn node(&self, k: usize) -> &[f64] {
        self.values.node(k)
    }

    #[inline]
    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        self.values.node_mut(k)
    }

    pub fn values(&self) -> &Series {
        &self.values
    }

    /// True when two paths share interval, step count, and mode count.
    pub fn same_grid(&self, other: &GridPath) -> bool {
        self.t0 == other.t0 && self.t1 == other.t1 && self.n_steps() == other.n_steps()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::domain("path contains non-finite values"))
        }
    }
}

/// A two-argument family v(s,t) on the grid triangle {s ≤ t}, with an
/// r×c coefficient block per pair; the diagonal v(t,t) is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoForm {
    t0: f64,
    t1: f64,
    n_steps: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TwoForm {
    pub fn zeros(t0: f64, t1: f64, rows: usize, cols: usize, n_steps: usize) -> Self {
        let pairs = (n_steps + 2) * (n_steps + 1) / 2;
        TwoForm {
            t0,
            t1,
            n_steps,
            rows,
            cols,
            data: vec![0.0; pairs * rows * cols],
        }
    }

    /// Builds a two-form by filling each ordered pair block through
    /// `f(j, k, block)` with j ≤ k.
    pub fn from_fn(
        t0: f64,
        t1: f64,
        rows: usize,
        cols: usize,
        n_steps: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Self {
        let mut v = TwoForm::zeros(t0, t1, rows, cols, n_steps);
        for k in 0..=n_steps {
            for j in 0..=k {
                let b = v.block_mut(j, k);
                f(j, k, b);
            }
        }
        v
    }

    #[inline]
    fn offset(&self, j: usize, k: usize) -> usize {
        debug_assert!(j <= k && k <= self.n_steps);
        (k * (k + 1) / 2 + j) * self.rows * self.cols
    }

    /// Block at the ordered pair (j, k), row-major rows×cols.
    #[inline]
    pub fn block(&self, j: usize, k: usize) -> &[f64] {
        let o = self.offset(j, k);
        &self.data[o..o + self.rows * self.cols]
    }

    #[inline]
    pub fn block_mut(&mut self, j: usize, k: usize) -> &mut [f64] {
        let o = self.offset(j, k);
        let len = self.rows * self.cols;
        &mut self.data[o..o + len]
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + (self.t1 - self.t0) * k as f64 / self.n_steps as f64
    }

    pub fn same_grid_as_path(&self, p: &GridPath) -> bool {
        self.t0 == p.t0() && self.t1 == p.t1() && self.n_steps == p.n_steps()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Largest increment ratio max_{j<k} |p(t_k) − p(t_j)| / (t_k − t_j)^β over
/// all grid pairs (Euclidean norm over modes). A grid lower bound for the
/// continuum seminorm; exact for the sampled data.
pub fn holder_seminorm(path: &GridPath, beta: f64) -> f64 {
    let n = path.n_steps();
    let m = path.m();
    let mut diff = vec![0.0; m];
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for k in (j + 1)..=n {
            let (a, b) = (path.node(j), path.node(k));
            for i in 0..m {
                diff[i] = b[i] - a[i];
            }
            let dt = path.time(k) - path.time(j);
            worst = worst.max(norm2(&diff) / dt.powf(beta));
        }
    }
    worst
}

/// Two-form analogue of [`holder_seminorm`]: max over pairs of the Frobenius
/// norm of v(s,t) divided by (t−s)^order.
pub fn two_form_seminorm(v: &TwoForm, order: f64) -> f64 {
    let n = v.n_steps();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for k in (j + 1)..=n {
            let dt = v.time(k) - v.time(j);
            worst = worst.max(norm2(v.block(j, k)) / dt.powf(order));
        }
    }
    worst
}

/// Worst violation of the Chen equality over all grid triples s ≤ r ≤ t:
/// ‖v(s,r) + v(r,t) + (u(r)−u(s)) ⊗ (ω(t)−ω(r)) − v(s,t)‖_F.
pub fn chen_residual(u: &GridPath, omega: &GridPath, v: &TwoForm) -> f64 {
    assert!(
        u.same_grid(omega) && v.same_grid_as_path(u),
        "chen_residual needs a shared grid"
    );
    assert_eq!(v.rows(), u.m());
    assert_eq!(v.cols(), omega.m());
    let n = u.n_steps();
    let (rows, cols) = (v.rows(), v.cols());
    let mut worst: f64 = 0.0;
    let mut block = vec![0.0; rows * cols];
    for j in 0..n {
        for r in j..=n {
            for k in r..=n {
                let (vsr, vrt, vst) = (v.block(j, r), v.block(r, k), v.block(j, k));
                let (us, ur) = (u.node(j), u.node(r));
                let (wr, wt) = (omega.node(r), omega.node(k));
                let mut sq = 0.0;
                for i in 0..rows {
                    let du = ur[i] - us[i];
                    for l in 0..cols {
                        let e = vsr[i * cols + l] + vrt[i * cols + l] + du * (wt[l] - wr[l])
                            - vst[i * cols + l];
                        block[i * cols + l] = e;
                        sq += e * e;
                    }
                }
                worst = worst.max(sq.sqrt());
            }
        }
    }
    worst
}

/// Resample a path through the piecewise-linear interpolant of its values at
/// `n` equally spaced coarse nodes; `n` must divide the step count.
pub fn piecewise_linearize(path: &GridPath, n: usize) -> Result<GridPath> {
    let fine = path.n_steps();
    if n == 0 || fine % n != 0 {
        return Err(Error::GridMismatch(format!(
            "coarse level {n} does not divide the {fine}-step grid"
        )));
    }
    let stride = fine / n;
    let m = path.m();
    let mut out = GridPath::zeros(path.t0(), path.t1(), m, fine);
    for k in 0..=fine {
        let seg = (k / stride).min(n - 1);
        let (lo, hi) = (seg * stride, (seg + 1) * stride);
        let w = (k - lo) as f64 / stride as f64;
        let (a, b) = (path.node(lo), path.node(hi));
        let dst = out.node_mut(k);
        for i in 0..m {
            dst[i] = (1.0 - w) * a[i] + w * b[i];
        }
    }
    Ok(out)
}

/// Exact tensor two-form of piecewise-linear data:
/// (u ⊗ ζ)(s,t) = ∫_s^t (u(τ)−u(s)) ⊗ ζ′(τ) dτ, with both factors linear on
/// each grid segment, so each segment contributes (ū_k − u(s)) ⊗ Δζ_k with
/// ū_k the segment midpoint value. Satisfies the Chen equality by
/// construction, up to rounding.
pub fn smooth_tensor(u: &GridPath, zeta: &GridPath) -> TwoForm {
    assert!(u.same_grid(zeta), "smooth_tensor needs a shared grid");
    let n = u.n_steps();
    let (rows, cols) = (u.m(), zeta.m());
    // Prefix sums P_l = Σ_{k<l} ū_k ⊗ Δζ_k; then
    // v(j,l) = P_l − P_j − u_j ⊗ (ζ_l − ζ_j).
    let mut prefix = Series::zeros(rows * cols, n + 1);
    for k in 0..n {
        let (ua, ub) = (u.node(k), u.node(k + 1));
        let (za, zb) = (zeta.node(k), zeta.node(k + 1));
        let prev = prefix.node(k).to_vec();
        let next = prefix.node_mut(k + 1);
        for i in 0..rows {
            let mid = 0.5 * (ua[i] + ub[i]);
            for l in 0..cols {
                next[i * cols + l] = prev[i * cols + l] + mid * (zb[l] - za[l]);
            }
        }
    }
    TwoForm::from_fn(u.t0(), u.t1(), rows, cols, n, |j, k, block| {
        let (pj, pk) = (prefix.node(j), prefix.node(k));
        let (uj, zj, zk) = (u.node(j), zeta.node(j), zeta.node(k));
        for i in 0..rows {
            for l in 0..cols {
                block[i * cols + l] = pk[i * cols + l] - pj[i * cols + l] - uj[i] * (zk[l] - zj[l]);
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wiggle(seed: f64, t: f64) -> f64 {
        (7.0 * seed + 3.1 * t).sin() + 0.4 * (13.0 * seed * t).cos()
    }

    #[test]
    fn holder_seminorm_reference_cases() {
        let constant = GridPath::scalar_from_fn(0.0, 1.0, 16, |_| 2.5);
        assert_eq!(holder_seminorm(&constant, 0.4), 0.0);

        let linear = GridPath::scalar_from_fn(0.0, 1.0, 16, |t| t);
        let s = holder_seminorm(&linear, 0.4);
        assert!((s - 1.0).abs() < 1e-12, "increment ratio maximized at the full interval: {s}");

        let mut doubled = linear.clone();
        for k in 0..=16 {
            doubled.node_mut(k)[0] *= 2.0;
        }
        assert!((holder_seminorm(&doubled, 0.4) - 2.0 * s).abs() < 1e-12);
    }

    #[test]
    fn holder_seminorm_grows_under_refinement() {
        let coarse = GridPath::scalar_from_fn(0.0, 1.0, 16, |t| t * t);
        let fine = GridPath::scalar_from_fn(0.0, 1.0, 32, |t| t * t);
        assert!(holder_seminorm(&fine, 0.4) >= holder_seminorm(&coarse, 0.4));
    }

    #[test]
    fn two_form_seminorm_reference_cases() {
        let zero = TwoForm::zeros(0.0, 1.0, 2, 2, 8);
        assert_eq!(two_form_seminorm(&zero, 0.7), 0.0);

        // v(s,t) = (t−s)·M with ‖M‖_F = 1: at order 1 every pair ratio is 1.
        let m = [0.5, 0.5, 0.5, 0.5];
        let t0 = 0.0;
        let t1 = 1.0;
        let v = TwoForm::from_fn(t0, t1, 2, 2, 8, |j, k, block| {
            let dt = (k - j) as f64 / 8.0;
            for (b, &mij) in block.iter_mut().zip(&m) {
                *b = dt * mij;
            }
        });
        assert!((two_form_seminorm(&v, 1.0) - 1.0).abs() < 1e-12);

        let mut scaled = v.clone();
        scaled.data.iter_mut().for_each(|x| *x *= 3.0);
        assert!((two_form_seminorm(&scaled, 1.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_tensor_constant_and_linear_cases() {
        let u_const = GridPath::from_fn(0.0, 1.0, 2, 12, |_, _, out| {
            out[0] = 1.0;
            out[1] = -2.0;
        });
        let zeta = GridPath::from_fn(0.0, 1.0, 2, 12, |_, t, out| {
            out[0] = t;
            out[1] = wiggle(0.3, t);
        });
        let v = smooth_tensor(&u_const, &zeta);
        // Constant u makes every compensated increment vanish up to the
        // rounding of the prefix sums that build the tensor.
        assert!(v.data().iter().fold(0.0f64, |a, &x| a.max(x.abs())) < 1e-14);

        let u_lin = GridPath::scalar_from_fn(0.0, 1.0, 12, |t| t);
        let z_lin = GridPath::scalar_from_fn(0.0, 1.0, 12, |t| t);
        let v = smooth_tensor(&u_lin, &z_lin);
        for k in 0..=12 {
            for j in 0..=k {
                let dt = (k - j) as f64 / 12.0;
                assert!((v.block(j, k)[0] - dt * dt / 2.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn smooth_tensor_quadratic_driver_midpoint_error() {
        // u(τ)=τ against the linearized ζ(τ)=τ²: the exact value 2/3 is met
        // with the midpoint-rule defect h²/6.
        let n = 256;
        let u = GridPath::scalar_from_fn(0.0, 1.0, n, |t| t);
        let z = GridPath::scalar_from_fn(0.0, 1.0, n, |t| t * t);
        let v = smooth_tensor(&u, &z);
        let got = v.block(0, n)[0];
        let h = 1.0 / n as f64;
        assert!((got - 2.0 / 3.0).abs() <= h * h / 6.0 + 1e-12, "{got}");
    }

    #[test]
    fn smooth_tensor_is_bilinear() {
        let n = 24;
        let u1 = GridPath::from_fn(0.0, 1.0, 2, n, |_, t, o| {
            o[0] = wiggle(0.1, t);
            o[1] = wiggle(0.2, t);
        });
        let u2 = GridPath::from_fn(0.0, 1.0, 2, n, |_, t, o| {
            o[0] = wiggle(0.4, t);
            o[1] = wiggle(0.5, t);
        });
        let z = GridPath::from_fn(0.0, 1.0, 2, n, |_, t, o| {
            o[0] = wiggle(0.7, t);
            o[1] = wiggle(0.8, t);
        });
        let mut u_sum = u1.clone();
        for k in 0..=n {
            let b = u2.node(k).to_vec();
            for (a, bv) in u_sum.node_mut(k).iter_mut().zip(b) {
                *a += bv;
            }
        }
        let v_sum = smooth_tensor(&u_sum, &z);
        let (v1, v2) = (smooth_tensor(&u1, &z), smooth_tensor(&u2, &z));
        for (i, &x) in v_sum.data().iter().enumerate() {
            assert!((x - (v1.data()[i] + v2.data()[i])).abs() < 1e-12);
        }

        let mut z_scaled = z.clone();
        for k in 0..=n {
            z_scaled.node_mut(k).iter_mut().for_each(|x| *x *= -1.75);
        }
        let v_scaled = smooth_tensor(&u1, &z_scaled);
        for (i, &x) in v_scaled.data().iter().enumerate() {
            assert!((x - (-1.75) * v1.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn chen_residual_vanishes_for_smooth_tensor() {
        let n = 32;
        let u = GridPath::from_fn(0.0, 1.0, 3, n, |_, t, o| {
            o[0] = wiggle(0.11, t);
            o[1] = wiggle(0.23, t);
            o[2] = t * t;
        });
        let z = GridPath::from_fn(0.0, 1.0, 2, n, |_, t, o| {
            o[0] = wiggle(0.31, t);
            o[1] = wiggle(0.43, t);
        });
        let v = smooth_tensor(&u, &z);
        assert!(chen_residual(&u, &z, &v) <= 1e-10);
    }

    #[test]
    fn chen_residual_detects_corruption() {
        let n = 16;
        let u = GridPath::scalar_from_fn(0.0, 1.0, n, |t| wiggle(0.5, t));
        let z = GridPath::scalar_from_fn(0.0, 1.0, n, |t| wiggle(0.9, t));
        let mut v = smooth_tensor(&u, &z);
        v.block_mut(3, 9)[0] += 1.0;
        assert!(chen_residual(&u, &z, &v) >= 0.999);
    }

    #[test]
    fn piecewise_linearize_identity_and_linear_invariance() {
        let n = 32;
        let p = GridPath::scalar_from_fn(0.0, 1.0, n, |t| wiggle(0.2, t));
        let same = piecewise_linearize(&p, n).unwrap();
        for k in 0..=n {
            assert_eq!(same.node(k), p.node(k));
        }
        let lin = GridPath::from_fn(0.0, 1.0, 2, n, |_, t, o| {
            o[0] = 3.0 * t - 1.0;
            o[1] = -t;
        });
        for &level in &[1, 2, 4, 8, 16, 32] {
            let out = piecewise_linearize(&lin, level).unwrap();
            for k in 0..=n {
                for i in 0..2 {
                    assert!((out.node(k)[i] - lin.node(k)[i]).abs() < 1e-14);
                }
            }
        }
        assert!(piecewise_linearize(&p, 5).is_err());
    }

    #[test]
    fn piecewise_linearize_quadratic_midpoint_deviation() {
        let n = 8;
        let p = GridPath::scalar_from_fn(0.0, 1.0, n, |t| t * t);
        let out = piecewise_linearize(&p, 2).unwrap();
        let mut worst = 0.0f64;
        for k in 0..=n {
            worst = worst.max((out.node(k)[0] - p.node(k)[0]).abs());
        }
        // Interpolating t² at {0, 1/2, 1}: largest gap 1/16 at t = 1/4, 3/4.
        assert!((worst - 1.0 / 16.0).abs() < 1e-14);
        assert!((out.node(2)[0] - p.node(2)[0]).abs() > 0.06);
    }
}
