//! Semigroup-convolved driver functionals in diagonal coordinates: one-level
//! increments, two-level areas, the mixed two-parameter tensor, and the
//! three-level state–area tensor, together with their Chen identities and
//! Hilbert–Schmidt norms.
//!
//! Everything here is assembled from exact per-segment arithmetic for
//! piecewise-linear drivers: each object reduces to the exponential segment
//! moments of [`crate::tables`], so the degenerate zero-eigenvalue limit
//! (plain Lévy areas) runs through the same recursion instead of a special
//! case. Rough drivers enter only through their piecewise-linear grid
//! samples; level-to-level convergence of the induced areas is monitored by
//! the sampling tools, not assumed here.
//!
//! Coordinate conventions, used consistently by every routine:
//! * mode index `i` — eigenvalue λ_i of the diagonal generator;
//! * driver indices `j, k, l` — components of the driving path;
//! * state index (also `j` where unambiguous) — components of the state path.
//!
//! A convolved area core is stored as `a[(i·m_d + j)·m_d + l]`, a triple
//! tensor as `t[((i·m_u + j)·m_d + k)·m_d + l]`. Cores never carry the
//! λ_i^{−2δ} basis weights; those enter only through the `hs_norm` helpers,
//! so the same core serves every δ.

use crate::error::Error;
use crate::hypothesis::HolderParams;
use crate::paths::{GridPath, TwoForm};
use crate::series::Series;
use crate::spectral::SpectralModel;
use crate::tables;
use crate::Result;
use crate::fraccalc::{
    compensated_deriv, composed_right_deriv, envelope_weights, frac_deriv_left, frac_deriv_right,
};

/// One semigroup-weighted driver increment: the matrix `w[i][l]` of
/// `∫ e^{−λ_i·(…)} dω_l` over a grid window, for one of the two kernel
/// anchorings (see [`convolved_increment`] and [`semigroup_increment`]).
#[derive(Debug, Clone)]
pub struct ConvolvedIncrement {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
}

impl ConvolvedIncrement {
    /// Entry for mode `i`, driver component `l`.
    pub fn at(&self, i: usize, l: usize) -> f64 {
        self.w[i * self.cols + l]
    }

    /// Number of modes.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of driver components.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major backing matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.w
    }

    /// Frobenius norm of the matrix.
    pub fn frobenius(&self) -> f64 {
        self.w.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn check_window(omega: &GridPath, js: usize, jt: usize) -> Result<()> {
    if js > jt || jt > omega.n_steps() {
        return Err(Error::domain(format!(
            "window indices ({js}, {jt}) are not ordered within 0..={}",
            omega.n_steps()
        )));
    }
    Ok(())
}

/// Per-eigenvalue segment quantities at step `h`: the one-step decay factor,
/// and the zeroth/first exponential moments scaled to act on increments.
struct SegmentKernel {
    decay: Vec<f64>,
    /// e0(λ, h)/h — multiplies a raw increment to give `slope·e0`.
    c0: Vec<f64>,
    /// e1(λ, h)/h² — multiplies a product of raw increments to give the
    /// same-segment double integral `slope_j·slope_l·e1`.
    c1: Vec<f64>,
}

fn segment_kernel(lambdas: &[f64], h: f64) -> SegmentKernel {
    SegmentKernel {
        decay: lambdas.iter().map(|&l| (-l * h).exp()).collect(),
        c0: lambdas.iter().map(|&l| tables::e0(l, h) / h).collect(),
        c1: lambdas.iter().map(|&l| tables::e1(l, h) / (h * h)).collect(),
    }
}

/// `w[i][l] = ∫_s^t e^{−λ_i(ξ−s)} dω_l(ξ)`: kernel anchored at the *left*
/// end, so the increment is what the flow hands forward from time `s`.
/// Exact for the piecewise-linear driver; `w(t,t) = 0`; at λ_i → 0 it
/// degenerates to the plain increment `ω_l(t) − ω_l(s)`.
pub fn convolved_increment(
    model: &SpectralModel,
    omega: &GridPath,
    js: usize,
    jt: usize,
) -> Result<ConvolvedIncrement> {
    check_window(omega, js, jt)?;
    Ok(anchored_left_increment(model.eigenvalues(), omega, js, jt))
}

/// `w[i][l] = ∫_s^t e^{−λ_i(t−q)} dω_l(q)`: kernel anchored at the *right*
/// end — the increment as seen arriving at time `t` after decay. This is the
/// composition factor in the Chen cross terms and in the mixed tensor.
pub fn semigroup_increment(
    model: &SpectralModel,
    omega: &GridPath,
    js: usize,
    jt: usize,
) -> Result<ConvolvedIncrement> {
    check_window(omega, js, jt)?;
    Ok(anchored_right_increment(model.eigenvalues(), omega, js, jt))
}

fn anchored_left_increment(
    lambdas: &[f64],
    omega: &GridPath,
    js: usize,
    jt: usize,
) -> ConvolvedIncrement {
    let mi = lambdas.len();
    let md = omega.m();
    let ker = segment_kernel(lambdas, omega.h());
    let mut w = vec![0.0; mi * md];
    let mut pd = vec![1.0; mi];
    for k in js..jt {
        let a = omega.node(k);
        let b = omega.node(k + 1);
        for i in 0..mi {
            let c = pd[i] * ker.c0[i];
            for l in 0..md {
                w[i * md + l] += c * (b[l] - a[l]);
            }
        }
        for i in 0..mi {
            pd[i] *= ker.decay[i];
        }
    }
    ConvolvedIncrement { rows: mi, cols: md, w }
}

fn anchored_right_increment(
    lambdas: &[f64],
    omega: &GridPath,
    js: usize,
    jt: usize,
) -> ConvolvedIncrement {
    let mi = lambdas.len();
    let md = omega.m();
    let ker = segment_kernel(lambdas, omega.h());
    let mut w = vec![0.0; mi * md];
    for k in js..jt {
        let a = omega.node(k);
        let b = omega.node(k + 1);
        for i in 0..mi {
            for l in 0..md {
                w[i * md + l] = ker.decay[i] * w[i * md + l] + ker.c0[i] * (b[l] - a[l]);
            }
        }
    }
    ConvolvedIncrement { rows: mi, cols: md, w }
}

/// Table of left-anchored tails `w[i][l](t_k, t_jt)` for every `k` in
/// `js..=jt`, flat layout `(k−js)·(mi·md) + i·md + l`, built by one backward
/// sweep.
pub(crate) fn anchored_tail_table(lambdas: &[f64], omega: &GridPath, js: usize, jt: usize) -> Vec<f64> {
    let mi = lambdas.len();
    let md = omega.m();
    let ker = segment_kernel(lambdas, omega.h());
    let stride = mi * md;
    let rows = jt - js + 1;
    let mut out = vec![0.0; rows * stride];
    for k in (js..jt).rev() {
        let a = omega.node(k);
        let b = omega.node(k + 1);
        let (lo, hi) = out.split_at_mut((k - js + 1) * stride);
        let cur = &mut lo[(k - js) * stride..];
        let next = &hi[..stride];
        for i in 0..mi {
            for l in 0..md {
                cur[i * md + l] = ker.c0[i] * (b[l] - a[l]) + ker.decay[i] * next[i * md + l];
            }
        }
    }
    out
}

/// Left-anchored tails on the half-step grid: `w[i][l](τ, t_jt)` for τ
/// running over nodes *and midpoints* of `js..=jt`, row `hk` ↦ τ =
/// `t_js + hk·h/2`. Midpoint rows make segment-local Simpson rules exact
/// enough for the direct-integral oracles.
fn half_tail_table(lambdas: &[f64], omega: &GridPath, js: usize, jt: usize) -> Vec<f64> {
    let mi = lambdas.len();
    let md = omega.m();
    let h2 = omega.h() / 2.0;
    let ker = segment_kernel(lambdas, h2);
    let stride = mi * md;
    let rows = 2 * (jt - js) + 1;
    let mut out = vec![0.0; rows * stride];
    for hk in (0..rows - 1).rev() {
        let seg = js + hk / 2;
        let a = omega.node(seg);
        let b = omega.node(seg + 1);
        let (lo, hi) = out.split_at_mut((hk + 1) * stride);
        let cur = &mut lo[hk * stride..];
        let next = &hi[..stride];
        for i in 0..mi {
            for l in 0..md {
                // Half-segment increment of the parent segment's linear run.
                let dv = (b[l] - a[l]) / 2.0;
                cur[i * md + l] = ker.c0[i] * dv + ker.decay[i] * next[i * md + l];
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Convolved areas
// ---------------------------------------------------------------------------

/// All-pairs table of convolved-area cores
/// `a[i][j][l](s,t) = ∫_s^t ∫_s^ξ e^{−λ_i(ξ−r)} dω_j(r) dω_l(ξ)`,
/// stored per grid pair with layout `(i·m_d + j)·m_d + l`.
#[derive(Debug, Clone)]
pub struct ConvolvedArea {
    m_model: usize,
    m_driver: usize,
    table: TwoForm,
}

impl ConvolvedArea {
    /// Core block for the pair `(t_js, t_jt)`.
    pub fn core(&self, js: usize, jt: usize) -> &[f64] {
        self.table.block(js, jt)
    }

    /// Single entry: mode `i`, inner driver component `j`, outer `l`.
    pub fn entry(&self, js: usize, jt: usize, i: usize, j: usize, l: usize) -> f64 {
        self.core(js, jt)[(i * self.m_driver + j) * self.m_driver + l]
    }

    pub fn m_model(&self) -> usize {
        self.m_model
    }

    pub fn m_driver(&self) -> usize {
        self.m_driver
    }

    pub fn n_steps(&self) -> usize {
        self.table.n_steps()
    }

    pub fn t0(&self) -> f64 {
        self.table.t0()
    }

    pub fn t1(&self) -> f64 {
        self.table.t1()
    }

    /// Hilbert–Schmidt norm of one pair: `sqrt(Σ λ_i^{−2δ} a[i][j][l]²)`,
    /// the operator norm induced by the δ-weighted basis.
    pub fn hs_norm(&self, model: &SpectralModel, js: usize, jt: usize) -> f64 {
        area_hs_norm(model, self.core(js, jt))
    }

    fn check_against(&self, model: &SpectralModel, omega: &GridPath) -> Result<()> {
        if self.m_model != model.m() || self.m_driver != omega.m() {
            return Err(Error::GridMismatch(format!(
                "area table built for {}×{} components, model/driver have {}×{}",
                self.m_model,
                self.m_driver,
                model.m(),
                omega.m()
            )));
        }
        if !self.table.same_grid_as_path(omega) {
            return Err(Error::GridMismatch(
                "area table grid differs from the driver grid".into(),
            ));
        }
        Ok(())
    }
}

/// `sqrt(Σ_{ijl} λ_i^{−2δ}·core²)` for an area core laid out
/// `(i·m_d + j)·m_d + l`.
pub fn area_hs_norm(model: &SpectralModel, core: &[f64]) -> f64 {
    let mi = model.m();
    let per = core.len() / mi;
    let mut s = 0.0;
    for (i, &lam) in model.eigenvalues().iter().enumerate() {
        let w = lam.powf(-2.0 * model.delta());
        let chunk = &core[i * per..(i + 1) * per];
        s += w * chunk.iter().map(|x| x * x).sum::<f64>();
    }
    s.sqrt()
}

/// One forward walk of the area recursion for the anchor row `js`:
/// after stepping segment `kt`, `sink(kt+1, acc)` receives the cores
/// `a(t_js, t_{kt+1})`. Both the all-pairs builder and the on-demand query
/// drive this same loop, so the two storage modes are bit-identical.
pub(crate) fn walk_area_row(
    lambdas: &[f64],
    omega: &GridPath,
    js: usize,
    k_end: usize,
    mut sink: impl FnMut(usize, &[f64]),
) {
    let mi = lambdas.len();
    let md = omega.m();
    let ker = segment_kernel(lambdas, omega.h());
    let mut sw = vec![0.0; mi * md];
    let mut acc = vec![0.0; mi * md * md];
    let mut dv = vec![0.0; md];
    for kt in js..k_end {
        let a = omega.node(kt);
        let b = omega.node(kt + 1);
        for l in 0..md {
            dv[l] = b[l] - a[l];
        }
        for i in 0..mi {
            for j in 0..md {
                let swij = sw[i * md + j];
                let base = (i * md + j) * md;
                for l in 0..md {
                    acc[base + l] += dv[j] * dv[l] * ker.c1[i] + swij * dv[l] * ker.c0[i];
                }
            }
        }
        for i in 0..mi {
            for j in 0..md {
                sw[i * md + j] = ker.decay[i] * sw[i * md + j] + dv[j] * ker.c0[i];
            }
        }
        sink(kt + 1, &acc);
    }
}

/// Build the convolved-area cores for every grid pair. Memory is
/// `pairs·m·m_d²` floats; the builder refuses tables past a fixed budget —
/// use [`convolved_area_at`] for single pairs on finer grids (the two give
/// bit-identical values).
pub fn convolved_area(model: &SpectralModel, omega: &GridPath) -> Result<ConvolvedArea> {
    omega.check_finite()?;
    let n = omega.n_steps();
    let mi = model.m();
    let md = omega.m();
    let block = mi * md * md;
    let pairs = (n + 1) * (n + 2) / 2;
    let budget: usize = 1 << 24;
    if pairs.saturating_mul(block) > budget {
        return Err(Error::CapExceeded(format!(
            "all-pairs area table would hold {} floats (budget {budget}); \
             query pairs on demand instead",
            pairs * block
        )));
    }
    let mut table = TwoForm::zeros(omega.t0(), omega.t1(), mi * md, md, n);
    for js in 0..=n {
        walk_area_row(model.eigenvalues(), omega, js, n, |kt1, acc| {
            table.block_mut(js, kt1).copy_from_slice(acc);
        });
    }
    Ok(ConvolvedArea {
        m_model: mi,
        m_driver: md,
        table,
    })
}

/// Convolved-area core for a single pair, computed by the same segment walk
/// as the all-pairs builder (bit-identical to the stored block).
pub fn convolved_area_at(
    model: &SpectralModel,
    omega: &GridPath,
    js: usize,
    jt: usize,
) -> Result<Vec<f64>> {
    check_window(omega, js, jt)?;
    let mut out = vec![0.0; model.m() * omega.m() * omega.m()];
    walk_area_row(model.eigenvalues(), omega, js, jt, |kt1, acc| {
        if kt1 == jt {
            out.copy_from_slice(acc);
        }
    });
    Ok(out)
}

/// Plain Lévy area `L[j][l] = ∫_s^t (ω_j(ξ)−ω_j(s)) dω_l(ξ)` of the
/// piecewise-linear driver, row-major `m_d×m_d`. This is the convolved
/// recursion run with a single zero eigenvalue, so the degenerate limit and
/// the plain object share every closed form.
pub fn plain_levy_area(omega: &GridPath, js: usize, jt: usize) -> Result<Vec<f64>> {
    check_window(omega, js, jt)?;
    let md = omega.m();
    let mut out = vec![0.0; md * md];
    walk_area_row(&[0.0], omega, js, jt, |kt1, acc| {
        if kt1 == jt {
            out.copy_from_slice(acc);
        }
    });
    Ok(out)
}

/// Residual of the convolved Chen identity over the triple
/// `s ≤ r ≤ t`:
/// `a(s,t) = a(s,r) + a(r,t) + sw[i][j](s,r)·w[i][l](r,t)`,
/// where `sw` is the right-anchored increment over `(s,r)` and `w` the
/// left-anchored increment over `(r,t)`. Returns the max over `(i,j,l)` of
/// the defect; float noise for exact piecewise-linear construction.
pub fn convolved_chen_residual(
    model: &SpectralModel,
    omega: &GridPath,
    area: &ConvolvedArea,
    js: usize,
    jr: usize,
    jt: usize,
) -> Result<f64> {
    area.check_against(model, omega)?;
    check_window(omega, js, jr)?;
    check_window(omega, jr, jt)?;
    let mi = model.m();
    let md = omega.m();
    let sw = semigroup_increment(model, omega, js, jr)?;
    let wl = convolved_increment(model, omega, jr, jt)?;
    let a_sr = area.core(js, jr);
    let a_rt = area.core(jr, jt);
    let a_st = area.core(js, jt);
    let mut worst = 0.0f64;
    for i in 0..mi {
        for j in 0..md {
            let base = (i * md + j) * md;
            for l in 0..md {
                let lhs = a_sr[base + l] + a_rt[base + l] + sw.at(i, j) * wl.at(i, l);
                worst = worst.max((lhs - a_st[base + l]).abs());
            }
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Mixed tensor
// ---------------------------------------------------------------------------

/// Mixed-tensor core over `(s, τ)` with reference endpoint `t`:
/// `m[i][b][l] = sw[i][b](s,τ)·w[i][l](τ,t) + a[i][b][l](s,τ)
///             − (ω_b(τ)−ω_b(s))·w[i][l](s,t)`,
/// layout `(i·m_d + b)·m_d + l`. The middle sign is fixed by the direct
/// integral it must equal (see [`mixed_tensor_oracle`]); with that sign the
/// three closed-form terms reproduce
/// `∫_s^τ (w[i][l](r,t) − w[i][l](s,t)) dω_b(r)` exactly for
/// piecewise-linear drivers.
pub fn mixed_tensor(
    model: &SpectralModel,
    omega: &GridPath,
    area: &ConvolvedArea,
    js: usize,
    jtau: usize,
    jt: usize,
) -> Result<Vec<f64>> {
    area.check_against(model, omega)?;
    check_window(omega, js, jtau)?;
    check_window(omega, jtau, jt)?;
    let mi = model.m();
    let md = omega.m();
    let sw = semigroup_increment(model, omega, js, jtau)?;
    let w_tau = convolved_increment(model, omega, jtau, jt)?;
    let w_s = convolved_increment(model, omega, js, jt)?;
    let a_core = area.core(js, jtau);
    let os = omega.node(js);
    let ot = omega.node(jtau);
    let mut out = vec![0.0; mi * md * md];
    for i in 0..mi {
        for b in 0..md {
            let base = (i * md + b) * md;
            let dwb = ot[b] - os[b];
            for l in 0..md {
                out[base + l] =
                    sw.at(i, b) * w_tau.at(i, l) + a_core[base + l] - dwb * w_s.at(i, l);
            }
        }
    }
    Ok(out)
}

/// Direct-quadrature reference for the mixed tensor:
/// `∫_s^τ (w[i][l](r,t) − w[i][l](s,t)) dω_b(r)` by segment-local Simpson
/// with exact mid-segment tail values. Agrees with [`mixed_tensor`] to the
/// Simpson error of the tail factor (≈ h⁴ for smooth drivers).
pub fn mixed_tensor_oracle(
    model: &SpectralModel,
    omega: &GridPath,
    js: usize,
    jtau: usize,
    jt: usize,
) -> Result<Vec<f64>> {
    check_window(omega, js, jtau)?;
    check_window(omega, jtau, jt)?;
    let mi = model.m();
    let md = omega.m();
    let stride = mi * md;
    let half = half_tail_table(model.eigenvalues(), omega, js, jt);
    let w_s = &half[..stride];
    let mut out = vec![0.0; mi * md * md];
    for k in js..jtau {
        let a = omega.node(k);
        let b = omega.node(k + 1);
        let w0 = &half[2 * (k - js) * stride..][..stride];
        let wm = &half[(2 * (k - js) + 1) * stride..][..stride];
        let w1 = &half[(2 * (k - js) + 2) * stride..][..stride];
        for i in 0..mi {
            for bb in 0..md {
                let dvb = b[bb] - a[bb];
                let base = (i * md + bb) * md;
                for l in 0..md {
                    let f = w0[i * md + l] + 4.0 * wm[i * md + l] + w1[i * md + l]
                        - 6.0 * w_s[i * md + l];
                    out[base + l] += dvb / 6.0 * f;
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Triple tensor
// ---------------------------------------------------------------------------

/// Triangular pair index for `0 ≤ j ≤ k ≤ n`.
pub(crate) fn tri(j: usize, k: usize, n: usize) -> usize {
    j * (2 * n + 3 - j) / 2 + (k - j)
}

/// All-pairs right-anchored increments `sw[i][l](t_j, t_k)` over a window,
/// trianglular layout `tri(j,k)·(mi·md) + i·md + l`.
pub(crate) fn semigroup_pair_table(lambdas: &[f64], omega: &GridPath, js: usize, jq: usize) -> Vec<f64> {
    let mi = lambdas.len();
    let md = omega.m();
    let nw = jq - js;
    let ker = segment_kernel(lambdas, omega.h());
    let stride = mi * md;
    let mut out = vec![0.0; (nw + 1) * (nw + 2) / 2 * stride];
    let mut cur = vec![0.0; stride];
    for jj in 0..=nw {
        cur.iter_mut().for_each(|x| *x = 0.0);
        for kk in jj..nw {
            let a = omega.node(js + kk);
            let b = omega.node(js + kk + 1);
            for i in 0..mi {
                for l in 0..md {
                    cur[i * md + l] =
                        ker.decay[i] * cur[i * md + l] + ker.c0[i] * (b[l] - a[l]);
                }
            }
            out[tri(jj, kk + 1, nw) * stride..][..stride].copy_from_slice(&cur);
        }
    }
    out
}

/// Three-level tensor core over the window `(s, q)` with reference endpoint
/// `t`, layout `((i·m_u + j)·m_d + k)·m_d + l`: the value the tensor
/// fixed-point equation assigns to the state/area pairing, computed as three
/// fractional pairings over the window —
///
/// 1. a compensated left derivative of the product
///    `w[i][l](r,t)·(u_j(r)−u_j(s))` (double-increment numerator) against
///    the signed right derivative of `ω_k`;
/// 2. the left derivative of the state increment against the composed right
///    derivative of the mixed tensor;
/// 3. the left derivative of the tail factor against the composed right
///    derivative of the supplied state–driver tensor `v`.
///
/// All three pairings enter with a minus sign; that overall sign is fixed
/// once by the smooth-data oracle (see [`triple_tensor_oracle`]) and is the
/// one that makes the Chen identity close. Windows shorter than two
/// segments return zero — their true magnitude vanishes at window scale and
/// no interior quadrature node exists.
#[allow(clippy::too_many_arguments)]
pub fn triple_tensor(
    u: &GridPath,
    v: &TwoForm,
    model: &SpectralModel,
    omega: &GridPath,
    area: &ConvolvedArea,
    js: usize,
    jq: usize,
    jt: usize,
    params: &HolderParams,
) -> Result<Vec<f64>> {
    if !u.same_grid(omega) {
        return Err(Error::GridMismatch(
            "state path and driver must share a grid".into(),
        ));
    }
    if !v.same_grid_as_path(omega) || v.rows() != u.m() || v.cols() != omega.m() {
        return Err(Error::GridMismatch(
            "tensor v must live on the driver grid with state×driver components".into(),
        ));
    }
    area.check_against(model, omega)?;
    check_window(omega, js, jq)?;
    check_window(omega, jq, jt)?;
    let mi = model.m();
    let mu = u.m();
    let md = omega.m();
    let len = mi * mu * md * md;
    let nw = jq - js;
    if nw < 2 {
        return Ok(vec![0.0; len]);
    }
    let h = omega.h();
    let alpha = params.alpha;
    let bb = params.beta;
    let bp = params.beta_prime;
    let stride = mi * md;
    let tail = anchored_tail_table(model.eigenvalues(), omega, js, jt);
    let du = Series::from_fn(mu, nw + 1, |r, buf| {
        let base = u.node(js);
        let cur = u.node(js + r);
        for j in 0..mu {
            buf[j] = cur[j] - base[j];
        }
    });
    let mut out = vec![0.0; len];

    // Pairing 1: compensated product derivative against the driver.
    let w_a = envelope_weights(nw, h, 0.0, alpha + bp - 1.0);
    let mut rks = Vec::with_capacity(md);
    for k in 0..md {
        let zk = Series::from_fn(1, nw + 1, |r, buf| buf[0] = omega.node(js + r)[k]);
        rks.push(frac_deriv_right(&zk, 1.0 - alpha, h)?);
    }
    for i in 0..mi {
        for l in 0..md {
            let wv = |r: usize| tail[r * stride + i * md + l];
            let gu = Series::from_fn(mu, nw + 1, |r, buf| {
                let w = wv(r);
                let dr = du.node(r);
                for j in 0..mu {
                    buf[j] = w * dr[j];
                }
            });
            let a_field = compensated_deriv(
                &gu,
                |q, r, buf| {
                    let wq = wv(q);
                    let wr = wv(r);
                    let dq = du.node(q);
                    let dr = du.node(r);
                    for j in 0..mu {
                        buf[j] = wr * dr[j] - wq * dq[j] - (wr - wq) * (dr[j] - dq[j]);
                    }
                },
                alpha,
                h,
            )?;
            for r in 1..nw {
                let wr = w_a[r];
                if wr == 0.0 {
                    continue;
                }
                let af = a_field.node(r);
                for k in 0..md {
                    let c = wr * rks[k].node(r)[0];
                    for j in 0..mu {
                        out[((i * mu + j) * md + k) * md + l] -= c * af[j];
                    }
                }
            }
        }
    }

    // Pairing 2: state increment against the composed mixed-tensor field.
    let l_u = frac_deriv_left(&du, 2.0 * alpha - 1.0, h)?;
    let swp = semigroup_pair_table(model.eigenvalues(), omega, js, jq);
    let mut m_tab = TwoForm::zeros(omega.time(js), omega.time(jq), mi * md, md, nw);
    for jj in 0..nw {
        for kk in (jj + 1)..=nw {
            let swrow = &swp[tri(jj, kk, nw) * stride..][..stride];
            let wl_tau = &tail[kk * stride..][..stride];
            let wl_r = &tail[jj * stride..][..stride];
            let a_core = area.core(js + jj, js + kk);
            let oj = omega.node(js + jj);
            let ok = omega.node(js + kk);
            let block = m_tab.block_mut(jj, kk);
            for i in 0..mi {
                for b in 0..md {
                    let base = (i * md + b) * md;
                    let dwb = ok[b] - oj[b];
                    for l in 0..md {
                        block[base + l] = swrow[i * md + b] * wl_tau[i * md + l]
                            + a_core[base + l]
                            - dwb * wl_r[i * md + l];
                    }
                }
            }
        }
    }
    let c_m = composed_right_deriv(&m_tab, alpha, 2.0 * bp)?;
    let w_b = envelope_weights(nw, h, 0.0, 2.0 * bp + 2.0 * alpha - 2.0);
    for r in 1..nw {
        let wr = w_b[r];
        if wr == 0.0 {
            continue;
        }
        let lu = l_u.node(r);
        let cm = c_m.node(r);
        for i in 0..mi {
            for j in 0..mu {
                let c = wr * lu[j];
                for k in 0..md {
                    let base = (i * md + k) * md;
                    for l in 0..md {
                        out[((i * mu + j) * md + k) * md + l] -= c * cm[base + l];
                    }
                }
            }
        }
    }

    // Pairing 3: tail factor against the composed state–driver tensor.
    let w_series = Series::from_fn(stride, nw + 1, |r, buf| {
        buf.copy_from_slice(&tail[r * stride..][..stride]);
    });
    let l_w = frac_deriv_left(&w_series, 2.0 * alpha - 1.0, h)?;
    let mut v_win = TwoForm::zeros(omega.time(js), omega.time(jq), mu, md, nw);
    for jj in 0..nw {
        for kk in (jj + 1)..=nw {
            v_win.block_mut(jj, kk).copy_from_slice(v.block(js + jj, js + kk));
        }
    }
    let c_v = composed_right_deriv(&v_win, alpha, bb + bp)?;
    let w_c = envelope_weights(nw, h, 1.0 - 2.0 * alpha, bb + bp + 2.0 * alpha - 2.0);
    for r in 1..nw {
        let wr = w_c[r];
        if wr == 0.0 {
            continue;
        }
        let lw = l_w.node(r);
        let cv = c_v.node(r);
        for i in 0..mi {
            for l in 0..md {
                let a = wr * lw[i * md + l];
                for j in 0..mu {
                    for k in 0..md {
                        out[((i * mu + j) * md + k) * md + l] -= a * cv[j * md + k];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Direct-quadrature reference for the triple tensor on differentiable data:
/// `−∫_s^q (u_j(r)−u_j(s))·w[i][l](r,t) dω_k(r)` by segment-local Simpson
/// with exact mid-segment tail values (the state path is piecewise linear,
/// so its midpoint values are node averages and the rule's only error is the
/// tail factor's fourth derivative).
pub fn triple_tensor_oracle(
    u: &GridPath,
    model: &SpectralModel,
    omega: &GridPath,
    js: usize,
    jq: usize,
    jt: usize,
) -> Result<Vec<f64>> {
    if !u.same_grid(omega) {
        return Err(Error::GridMismatch(
            "state path and driver must share a grid".into(),
        ));
    }
    check_window(omega, js, jq)?;
    check_window(omega, jq, jt)?;
    let mi = model.m();
    let mu = u.m();
    let md = omega.m();
    let stride = mi * md;
    let half = half_tail_table(model.eigenvalues(), omega, js, jt);
    let us = u.node(js);
    let mut out = vec![0.0; mi * mu * md * md];
    for seg in js..jq {
        let oa = omega.node(seg);
        let ob = omega.node(seg + 1);
        let ua = u.node(seg);
        let ub = u.node(seg + 1);
        let w0 = &half[2 * (seg - js) * stride..][..stride];
        let wm = &half[(2 * (seg - js) + 1) * stride..][..stride];
        let w1 = &half[(2 * (seg - js) + 2) * stride..][..stride];
        for i in 0..mi {
            for j in 0..mu {
                let d0 = ua[j] - us[j];
                let d1 = ub[j] - us[j];
                let dm = 0.5 * (d0 + d1);
                for k in 0..md {
                    let dvk = ob[k] - oa[k];
                    for l in 0..md {
                        let f = d0 * w0[i * md + l] + 4.0 * dm * wm[i * md + l]
                            + d1 * w1[i * md + l];
                        out[((i * mu + j) * md + k) * md + l] -= dvk / 6.0 * f;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Defect of the three-level Chen identity from precomputed parts:
/// `max |tt(s,r) + tt(r,t) − du_j(s,r)·a[i][k][l](r,t) − tt(s,t)|`
/// over all `(i,j,k,l)`. `du_sr` is the state increment over `(s,r)`,
/// `area_rt` the convolved-area core over `(r,t)`.
pub fn triple_chen_combine(
    tt_sr: &[f64],
    tt_rt: &[f64],
    tt_st: &[f64],
    du_sr: &[f64],
    area_rt: &[f64],
    m_model: usize,
    m_state: usize,
    m_driver: usize,
) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m_model {
        for j in 0..m_state {
            for k in 0..m_driver {
                for l in 0..m_driver {
                    let idx = ((i * m_state + j) * m_driver + k) * m_driver + l;
                    let cross = du_sr[j] * area_rt[(i * m_driver + k) * m_driver + l];
                    let d = tt_sr[idx] + tt_rt[idx] - cross - tt_st[idx];
                    worst = worst.max(d.abs());
                }
            }
        }
    }
    worst
}

/// Three-level Chen residual with all parts computed by the three-pairing
/// formula at reference endpoint `t`, split point `r`.
#[allow(clippy::too_many_arguments)]
pub fn triple_chen_residual(
    u: &GridPath,
    v: &TwoForm,
    model: &SpectralModel,
    omega: &GridPath,
    area: &ConvolvedArea,
    js: usize,
    jr: usize,
    jt: usize,
    params: &HolderParams,
) -> Result<f64> {
    let tt_sr = triple_tensor(u, v, model, omega, area, js, jr, jt, params)?;
    let tt_rt = triple_tensor(u, v, model, omega, area, jr, jt, jt, params)?;
    let tt_st = triple_tensor(u, v, model, omega, area, js, jt, jt, params)?;
    let us = u.node(js);
    let ur = u.node(jr);
    let du: Vec<f64> = (0..u.m()).map(|j| ur[j] - us[j]).collect();
    Ok(triple_chen_combine(
        &tt_sr,
        &tt_rt,
        &tt_st,
        &du,
        area.core(jr, jt),
        model.m(),
        u.m(),
        omega.m(),
    ))
}

/// `sqrt(Σ λ_i^{−2δ}·core²)` for a triple-tensor core laid out
/// `((i·m_u + j)·m_d + k)·m_d + l`.
pub fn triple_hs_norm(model: &SpectralModel, core: &[f64], m_state: usize, m_driver: usize) -> f64 {
    let per = m_state * m_driver * m_driver;
    let mut s = 0.0;
    for (i, &lam) in model.eigenvalues().iter().enumerate() {
        let w = lam.powf(-2.0 * model.delta());
        let chunk = &core[i * per..(i + 1) * per];
        s += w * chunk.iter().map(|x| x * x).sum::<f64>();
    }
    s.sqrt()
}

/// Measured anchoring modulus of the convolved increment: the maximum over
/// modes `i` and anchor pairs `s < r` (tails to the final node) of
/// `‖w[i][·](r,t) − w[i][·](s,t)‖ / (r−s)^{β′}` — finite for Hölder drivers,
/// a sweep diagnostic rather than a certified constant.
pub fn convolved_holder_ratio(
    model: &SpectralModel,
    omega: &GridPath,
    beta_prime: f64,
) -> Result<f64> {
    let n = omega.n_steps();
    if n == 0 {
        return Err(Error::domain("anchoring modulus needs at least one segment"));
    }
    let mi = model.m();
    let md = omega.m();
    let stride = mi * md;
    let tail = anchored_tail_table(model.eigenvalues(), omega, 0, n);
    let h = omega.h();
    let mut worst = 0.0f64;
    for s in 0..n {
        let rs = &tail[s * stride..][..stride];
        for r in (s + 1)..=n {
            let rr = &tail[r * stride..][..stride];
            let dt = ((r - s) as f64 * h).powf(beta_prime);
            for i in 0..mi {
                let mut sq = 0.0;
                for l in 0..md {
                    let d = rr[i * md + l] - rs[i * md + l];
                    sq += d * d;
                }
                worst = worst.max(sq.sqrt() / dt);
            }
        }
    }
    Ok(worst)
}

/// Serialize every stored pair of an area table as delimited text: a `#`
/// header with the dimensions, a `#` column-index line, then one
/// tab-separated row `(i, j, l, s_index, t_index, value)` per entry with
/// 17 significant digits.
pub fn write_area_table<W: std::io::Write>(
    area: &ConvolvedArea,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(
        out,
        "# convolved-area table  modes={}  drivers={}  n_steps={}  t0={:.16e}  t1={:.16e}",
        area.m_model(),
        area.m_driver(),
        area.n_steps(),
        area.t0(),
        area.t1()
    )?;
    writeln!(out, "# i\tj\tl\ts_index\tt_index\tvalue")?;
    let md = area.m_driver();
    for js in 0..=area.n_steps() {
        for jt in js..=area.n_steps() {
            let core = area.core(js, jt);
            for i in 0..area.m_model() {
                for j in 0..md {
                    for l in 0..md {
                        writeln!(
                            out,
                            "{i}\t{j}\t{l}\t{js}\t{jt}\t{:.16e}",
                            core[(i * md + j) * md + l]
                        )?;
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::smooth_tensor;

    fn scalar_linear(n: usize) -> GridPath {
        GridPath::scalar_from_fn(0.0, 1.0, n, |t| t)
    }

    fn unit_model(lambda: f64) -> SpectralModel {
        SpectralModel::new(vec![lambda], 0.0).unwrap()
    }

    fn wiggly(n: usize) -> GridPath {
        GridPath::from_fn(0.0, 1.0, 2, n, |_, t, buf| {
            buf[0] = t + 0.2 * (3.0 * t).sin();
            buf[1] = t * t - 0.1 * t + 0.15 * (2.0 * t + 0.3).cos();
        })
    }

    #[test]
    fn convolved_increment_integrates_the_exponential_kernel_exactly() {
        let omega = scalar_linear(7);
        let model = unit_model(1.0);
        let w = convolved_increment(&model, &omega, 0, 7).unwrap();
        let expect = 1.0 - (-1.0f64).exp();
        assert!((w.at(0, 0) - expect).abs() < 1e-14, "got {}", w.at(0, 0));

        let empty = convolved_increment(&model, &omega, 3, 3).unwrap();
        assert_eq!(empty.at(0, 0), 0.0);

        let zero = GridPath::zeros(0.0, 1.0, 1, 7);
        let wz = convolved_increment(&model, &zero, 0, 7).unwrap();
        assert_eq!(wz.frobenius(), 0.0);

        assert!(convolved_increment(&model, &omega, 5, 3).is_err());
    }

    #[test]
    fn semigroup_increment_anchors_the_kernel_at_the_right_end() {
        let omega = scalar_linear(11);
        let model = unit_model(1.0);
        let expect = 1.0 - (-1.0f64).exp();
        let sw = semigroup_increment(&model, &omega, 0, 11).unwrap();
        assert!((sw.at(0, 0) - expect).abs() < 1e-14);

        // A quadratic run tells the two anchorings apart.
        let quad = GridPath::scalar_from_fn(0.0, 1.0, 400, |t| t * t);
        let left = convolved_increment(&model, &quad, 0, 400).unwrap();
        let right = semigroup_increment(&model, &quad, 0, 400).unwrap();
        let e = (-1.0f64).exp();
        assert!((left.at(0, 0) - (2.0 - 4.0 * e)).abs() < 5e-5, "{}", left.at(0, 0));
        assert!((right.at(0, 0) - 2.0 * e).abs() < 5e-5, "{}", right.at(0, 0));
    }

    #[test]
    fn convolved_area_hits_the_exponential_double_integral() {
        let omega = scalar_linear(13);
        let model = unit_model(1.0);
        let area = convolved_area(&model, &omega).unwrap();
        let expect = (-1.0f64).exp();
        assert!(
            (area.entry(0, 13, 0, 0, 0) - expect).abs() < 1e-14,
            "got {}",
            area.entry(0, 13, 0, 0, 0)
        );
        assert_eq!(area.entry(5, 5, 0, 0, 0), 0.0);
    }

    #[test]
    fn degenerate_modes_reproduce_the_plain_levy_area() {
        let omega = wiggly(64);
        let tiny = SpectralModel::new(vec![1e-12], 0.0).unwrap();
        let conv = convolved_area_at(&tiny, &omega, 0, 64).unwrap();
        let plain = plain_levy_area(&omega, 0, 64).unwrap();
        for (c, p) in conv.iter().zip(plain.iter()) {
            assert!((c - p).abs() < 1e-10, "degenerate {c} vs plain {p}");
        }
        // Symmetric part of the plain area is the increment product.
        let o0 = omega.node(0);
        let o1 = omega.node(64);
        for j in 0..2 {
            for l in 0..2 {
                let sym = plain[j * 2 + l] + plain[l * 2 + j];
                let prod = (o1[j] - o0[j]) * (o1[l] - o0[l]);
                assert!((sym - prod).abs() < 1e-12);
            }
        }
        // Linear vs quadratic pair: the area tends to 2/3 as the sampling
        // refines (midpoint-rule bias h²/6 at this resolution).
        let pair = GridPath::from_fn(0.0, 1.0, 2, 64, |_, t, buf| {
            buf[0] = t;
            buf[1] = t * t;
        });
        let lv = plain_levy_area(&pair, 0, 64).unwrap();
        assert!((lv[1] - 2.0 / 3.0).abs() < 1e-3, "got {}", lv[1]);
    }

    #[test]
    fn on_demand_pairs_match_the_full_table_bitwise() {
        let omega = wiggly(40);
        let model = SpectralModel::new(vec![0.5, 2.0], 0.3).unwrap();
        let area = convolved_area(&model, &omega).unwrap();
        for &(js, jt) in &[(0usize, 40usize), (3, 17), (12, 13), (25, 40), (7, 7)] {
            let on_demand = convolved_area_at(&model, &omega, js, jt).unwrap();
            assert_eq!(on_demand.as_slice(), area.core(js, jt), "pair ({js},{jt})");
        }
    }

    #[test]
    fn chen_identity_residual_sits_at_rounding_level() {
        let omega = wiggly(40);
        let model = SpectralModel::new(vec![0.5, 2.0, 7.0], 0.25).unwrap();
        let mut area = convolved_area(&model, &omega).unwrap();
        for &(js, jr, jt) in &[(0usize, 13usize, 40usize), (3, 20, 37), (0, 1, 2)] {
            let res = convolved_chen_residual(&model, &omega, &area, js, jr, jt).unwrap();
            assert!(res < 1e-12, "triple ({js},{jr},{jt}) residual {res}");
        }
        // Corrupting one stored entry surfaces as exactly that defect.
        area.table.block_mut(0, 37)[5] += 1e-3;
        let res = convolved_chen_residual(&model, &omega, &area, 0, 20, 37).unwrap();
        assert!((res - 1e-3).abs() < 1e-9, "corrupted residual {res}");
    }

    #[test]
    fn mixed_tensor_matches_direct_integration_of_the_anchored_increment() {
        let omega = GridPath::from_fn(0.0, 1.0, 2, 128, |_, t, buf| {
            buf[0] = (1.7 * t).sin() + 0.3 * t;
            buf[1] = 0.8 * (2.3 * t + 0.4).cos();
        });
        let model = SpectralModel::new(vec![0.7, 3.0], 0.4).unwrap();
        let area = convolved_area(&model, &omega).unwrap();
        let m = mixed_tensor(&model, &omega, &area, 16, 80, 128).unwrap();
        let oracle = mixed_tensor_oracle(&model, &omega, 16, 80, 128).unwrap();
        let mut worst = 0.0f64;
        for (a, b) in m.iter().zip(oracle.iter()) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-6, "mixed tensor vs direct integral: {worst}");

        let degenerate = mixed_tensor(&model, &omega, &area, 16, 16, 128).unwrap();
        assert!(degenerate.iter().all(|&x| x == 0.0));
    }

    fn smooth_state(n: usize) -> GridPath {
        GridPath::from_fn(0.0, 1.0, 2, n, |_, t, buf| {
            buf[0] = 0.4 * (2.0 * t).sin() + 0.2 * t;
            buf[1] = 0.3 * (1.3 * t + 0.2).cos();
        })
    }

    fn smooth_driver(n: usize) -> GridPath {
        GridPath::from_fn(0.0, 1.0, 2, n, |_, t, buf| {
            buf[0] = (1.1 * t).sin();
            buf[1] = 0.7 * (0.9 * t + 0.1).cos() + 0.2 * t;
        })
    }

    #[test]
    fn triple_tensor_is_zero_for_frozen_state() {
        let n = 32;
        let omega = smooth_driver(n);
        let u = GridPath::from_fn(0.0, 1.0, 2, n, |_, _, buf| {
            buf[0] = 0.7;
            buf[1] = -0.2;
        });
        let v = TwoForm::zeros(0.0, 1.0, 2, 2, n);
        let model = SpectralModel::new(vec![0.8, 2.5], 0.4).unwrap();
        let area = convolved_area(&model, &omega).unwrap();
        let params = HolderParams::reference();
        let tt = triple_tensor(&u, &v, &model, &omega, &area, 0, 24, n, &params).unwrap();
        assert!(tt.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn triple_tensor_matches_the_smooth_direct_formula() {
        let n = 128;
        let omega = smooth_driver(n);
        let u = smooth_state(n);
        let v = smooth_tensor(&u, &omega);
        let model = SpectralModel::new(vec![0.8, 2.5], 0.4).unwrap();
        let area = convolved_area(&model, &omega).unwrap();
        let params = HolderParams::reference();
        for &(js, jq) in &[(0usize, 96usize), (16, 80)] {
            let tt = triple_tensor(&u, &v, &model, &omega, &area, js, jq, n, &params).unwrap();
            let oracle = triple_tensor_oracle(&u, &model, &omega, js, jq, n).unwrap();
            let scale = 1.0 + oracle.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            let mut worst = 0.0f64;
            for (a, b) in tt.iter().zip(oracle.iter()) {
                worst = worst.max((a - b).abs());
            }
            assert!(
                worst < 1e-3 * scale,
                "window ({js},{jq}): formula vs direct {worst:.3e} (scale {scale:.3})"
            );
        }
    }

    #[test]
    fn triple_chen_residual_from_oracle_parts_is_tiny() {
        let n = 128;
        let omega = smooth_driver(n);
        let u = smooth_state(n);
        let model = SpectralModel::new(vec![0.8, 2.5], 0.4).unwrap();
        let area = convolved_area(&model, &omega).unwrap();
        let tt_sr = triple_tensor_oracle(&u, &model, &omega, 0, 64, n).unwrap();
        let tt_rt = triple_tensor_oracle(&u, &model, &omega, 64, n, n).unwrap();
        let tt_st = triple_tensor_oracle(&u, &model, &omega, 0, n, n).unwrap();
        let du: Vec<f64> = (0..2).map(|j| u.node(64)[j] - u.node(0)[j]).collect();
        let res = triple_chen_combine(
            &tt_sr,
            &tt_rt,
            &tt_st,
            &du,
            area.core(64, n),
            2,
            2,
            2,
        );
        assert!(res < 1e-6, "oracle-built three-level Chen residual {res}");

        let zeros = vec![0.0; tt_sr.len()];
        let zres = triple_chen_combine(&zeros, &zeros, &zeros, &[0.0, 0.0], area.core(64, n), 2, 2, 2);
        assert_eq!(zres, 0.0);

        let mut bad = tt_sr.clone();
        bad[0] += 1e-2;
        let pres = triple_chen_combine(&bad, &tt_rt, &tt_st, &du, area.core(64, n), 2, 2, 2);
        assert!(pres > 9e-3);
    }

    #[test]
    fn norm_envelopes_stay_finite_over_window_sweeps() {
        let n = 48;
        let omega = smooth_driver(n);
        let u = smooth_state(n);
        let v = smooth_tensor(&u, &omega);
        let model = SpectralModel::new(vec![0.8, 2.5], 0.4).unwrap();
        let area = convolved_area(&model, &omega).unwrap();
        let params = HolderParams::reference();
        let h = omega.h();

        let mut area_ratio = 0.0f64;
        for js in 0..=n {
            for jt in (js + 1)..=n {
                let dt = ((jt - js) as f64 * h).powf(2.0 * params.beta_prime);
                area_ratio = area_ratio.max(area.hs_norm(&model, js, jt) / dt);
            }
        }
        assert!(area_ratio.is_finite() && area_ratio > 0.0);

        let mut triple_ratio = 0.0f64;
        for &(js, jq) in &[(0usize, 24usize), (8, 32), (16, 48), (0, 48)] {
            let tt = triple_tensor(&u, &v, &model, &omega, &area, js, jq, n, &params).unwrap();
            let norm = triple_hs_norm(&model, &tt, 2, 2);
            let dq = ((jq - js) as f64 * h).powf(params.beta + params.beta_prime);
            let dt = ((n - js) as f64 * h).powf(params.beta_prime);
            triple_ratio = triple_ratio.max(norm / (dq * dt));
        }
        assert!(triple_ratio.is_finite());

        let anchor = convolved_holder_ratio(&model, &omega, params.beta_prime).unwrap();
        assert!(anchor.is_finite() && anchor > 0.0);
    }

    #[test]
    fn area_tables_serialize_with_an_index_header() {
        let omega = wiggly(4);
        let model = SpectralModel::new(vec![0.5, 2.0], 0.3).unwrap();
        let area = convolved_area(&model, &omega).unwrap();
        let mut buf = Vec::new();
        write_area_table(&area, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().contains("modes=2"));
        assert!(lines.next().unwrap().starts_with("# i"));
        let pairs = 5 * 6 / 2;
        assert_eq!(text.lines().count(), 2 + pairs * 2 * 2 * 2);
        let row: Vec<&str> = text.lines().nth(2).unwrap().split('\t').collect();
        assert_eq!(row.len(), 6);
        let _: f64 = row[5].parse().unwrap();
    }
}
