//! Trace-class white-noise machinery: reproducible Q-Wiener sampling on a
//! grid, exact Lévy areas of piecewise-linear drivers, the semigroup
//! remainder decomposition of convolved areas, and level-to-level
//! area-convergence studies.
//!
//! Sampling is counter-based: every Gaussian increment is a pure function of
//! `(seed, counter)`, so identical specs reproduce bit-identical paths and
//! trials of a study can be split deterministically (and safely in parallel)
//! from one seed. The inverse-CDF step evaluates `erf⁻¹` through library
//! transcendentals, so bit-exactness holds per platform/libm build rather
//! than universally; all tests here compare runs within one process.
//!
//! Areas and remainders reuse the exact per-segment exponential arithmetic
//! of [`crate::area`] and [`crate::tables`]; nothing in this module is
//! quadrature-limited except where a doc comment says so.

use std::io::{self, Write};

use statrs::function::erf::erf_inv;

use crate::area;
use crate::error::Error;
use crate::hypothesis::HolderParams;
use crate::paths::{piecewise_linearize, GridPath, TwoForm};
use crate::spectral::SpectralModel;
use crate::tables;
use crate::Result;

/// Description of a trace-class driving noise: per-mode variance rates
/// `q_j`, a seed, and the fine sampling resolution.
///
/// Nominally every `q_j` is strictly positive (the covariance has full
/// support); zero entries are admitted so degenerate test configurations can
/// switch modes off without a separate code path.
#[derive(Debug, Clone)]
pub struct DriverSpec {
    q_weights: Vec<f64>,
    seed: u64,
    n_fine: usize,
}

impl DriverSpec {
    pub fn new(q_weights: Vec<f64>, seed: u64, n_fine: usize) -> Result<Self> {
        if q_weights.is_empty() {
            return Err(Error::domain("driver needs at least one mode weight"));
        }
        for (j, &q) in q_weights.iter().enumerate() {
            if !q.is_finite() || q < 0.0 {
                return Err(Error::domain(format!(
                    "mode weight q[{j}] = {q} must be finite and ≥ 0"
                )));
            }
        }
        if n_fine == 0 {
            return Err(Error::domain("fine resolution must be at least one step"));
        }
        Ok(DriverSpec {
            q_weights,
            seed,
            n_fine,
        })
    }

    /// Number of driven modes.
    pub fn m(&self) -> usize {
        self.q_weights.len()
    }

    /// Total variance rate Σ q_j (the trace of the covariance).
    pub fn trace(&self) -> f64 {
        self.q_weights.iter().sum()
    }

    pub fn q_weights(&self) -> &[f64] {
        &self.q_weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    /// Same spec with a replaced seed — the splitting primitive used to give
    /// every trial of a study its own independent stream.
    pub fn with_seed(&self, seed: u64) -> Self {
        DriverSpec {
            q_weights: self.q_weights.clone(),
            seed,
            n_fine: self.n_fine,
        }
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output for counter `ctr` from initial state `seed`: the whole
/// sample stream is random access, which is what makes trial splitting and
/// parallel sampling deterministic.
pub(crate) fn mix64(seed: u64, ctr: u64) -> u64 {
    let mut z = seed.wrapping_add(ctr.wrapping_add(1).wrapping_mul(GOLDEN));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal via inverse CDF of a counter-based uniform in (0,1).
fn standard_normal(seed: u64, ctr: u64) -> f64 {
    let bits = mix64(seed, ctr);
    let u = ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    std::f64::consts::SQRT_2 * erf_inv(2.0 * u - 1.0)
}

/// Sample one driver path on `[t0, t1]`: mode `j` gains i.i.d. centered
/// Gaussian increments of variance `q_j·Δt` per step, anchored at zero.
/// Identical `(spec, interval)` reproduce the path bit for bit.
pub fn sample_q_wiener(spec: &DriverSpec, t0: f64, t1: f64) -> Result<GridPath> {
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::domain(format!(
            "sampling interval [{t0}, {t1}] must be finite and increasing"
        )));
    }
    let m = spec.m();
    let n = spec.n_fine;
    let h = (t1 - t0) / n as f64;
    let mut path = GridPath::zeros(t0, t1, m, n);
    let mut acc = vec![0.0; m];
    for k in 0..n {
        for (j, a) in acc.iter_mut().enumerate() {
            let z = standard_normal(spec.seed, (k * m + j) as u64);
            *a += z * (spec.q_weights[j] * h).sqrt();
        }
        path.node_mut(k + 1).copy_from_slice(&acc);
    }
    Ok(path)
}

/// Lévy area matrix `L[j][l] = ∫_s^t (ω_j(ξ)−ω_j(s)) dω_l(ξ)` over one grid
/// window, exact for the piecewise-linear driver (the Stieltjes value, which
/// is the Stratonovich limit of smooth approximations — no Itô correction
/// appears anywhere in this crate). Row-major `m×m`.
pub fn levy_area(omega: &GridPath, js: usize, jt: usize) -> Result<Vec<f64>> {
    area::plain_levy_area(omega, js, jt)
}

/// All-pairs Lévy area table: block `(j,k)` of the result is the `m×m`
/// matrix of [`levy_area`] over `(t_j, t_k)`. Memory is `O(n²m²)` — desk
/// scale only.
pub fn levy_area_table(omega: &GridPath) -> Result<TwoForm> {
    omega.check_finite()?;
    let n = omega.n_steps();
    let md = omega.m();
    let mut table = TwoForm::zeros(omega.t0(), omega.t1(), md, md, n);
    for js in 0..=n {
        area::walk_area_row(&[0.0], omega, js, n, |kt1, acc| {
            table.block_mut(js, kt1).copy_from_slice(acc);
        });
    }
    Ok(table)
}

/// One row of a convergence-study table: level `n`, the median and quartiles
/// of the observed distances over trials, and the empirical order against
/// the next level (base-2 log of the median ratio per doubling; the last row
/// carries NaN).
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub n: usize,
    pub median_d: f64,
    pub q25: f64,
    pub q75: f64,
    pub slope: f64,
}

/// Distance between the areas of a fine path and of its `n`-segment
/// piecewise-linear interpolant, measured at the pairs of the `n_eval`-level
/// subgrid: the max over those pairs of the Hilbert–Schmidt area difference
/// (plain Frobenius, and λ^{−2δ}-weighted for the convolved areas — the
/// larger of the two) divided by `(t−s)^{2β′}`.
///
/// The evaluation grid is fixed independently of `n` so distances at
/// different levels are comparable; a study passes its coarsest level. Both
/// `n` and `n_eval` must divide the fine step count. Comparing a path
/// against itself (`n` equal to the fine resolution) gives exactly zero.
pub fn area_level_distance(
    model: &SpectralModel,
    params: &HolderParams,
    omega: &GridPath,
    n: usize,
    n_eval: usize,
) -> Result<f64> {
    let n_steps = omega.n_steps();
    if n_eval == 0 || n_steps % n_eval != 0 {
        return Err(Error::domain(format!(
            "evaluation level {n_eval} must divide the fine resolution {n_steps}"
        )));
    }
    let omega_n = piecewise_linearize(omega, n)?;
    let md = omega.m();
    let block = md * md;
    let mut lambdas = Vec::with_capacity(1 + model.m());
    lambdas.push(0.0);
    lambdas.extend_from_slice(model.eigenvalues());
    let conv_w: Vec<f64> = model
        .eigenvalues()
        .iter()
        .map(|&l| l.powf(-2.0 * model.delta()))
        .collect();
    let stride = n_steps / n_eval;
    let two_bp = 2.0 * params.beta_prime;
    let h = omega.h();
    let mut d = 0.0_f64;
    let mut fine_rows: Vec<Vec<f64>> = Vec::new();
    for a in 0..n_eval {
        let anchor = a * stride;
        fine_rows.clear();
        area::walk_area_row(&lambdas, omega, anchor, n_steps, |kt1, acc| {
            if (kt1 - anchor) % stride == 0 {
                fine_rows.push(acc.to_vec());
            }
        });
        area::walk_area_row(&lambdas, &omega_n, anchor, n_steps, |kt1, acc| {
            if (kt1 - anchor) % stride == 0 {
                let row = &fine_rows[(kt1 - anchor) / stride - 1];
                let mut plain = 0.0;
                for c in 0..block {
                    let e = row[c] - acc[c];
                    plain += e * e;
                }
                let mut conv = 0.0;
                for (i, &w) in conv_w.iter().enumerate() {
                    let off = (i + 1) * block;
                    let mut s = 0.0;
                    for c in 0..block {
                        let e = row[off + c] - acc[off + c];
                        s += e * e;
                    }
                    conv += w * s;
                }
                let dt = (kt1 - anchor) as f64 * h;
                let val = plain.sqrt().max(conv.sqrt()) / dt.powf(two_bp);
                if val > d {
                    d = val;
                }
            }
        });
    }
    Ok(d)
}

/// Monte-Carlo study of area convergence under piecewise-linear refinement:
/// for each trial a fine driver sample on `[0,1]`, for each level `n` the
/// distance of [`area_level_distance`] with the coarsest requested level as
/// the evaluation grid; reported as per-level medians with quartiles and
/// empirical orders.
///
/// Trials draw from generators split deterministically from the spec seed,
/// so the result is independent of execution order (trials could run in
/// parallel); levels must be ascending and divide the fine resolution.
pub fn area_convergence_study(
    spec: &DriverSpec,
    params: &HolderParams,
    model: &SpectralModel,
    n_list: &[usize],
    trials: usize,
) -> Result<Vec<StudyRow>> {
    if n_list.is_empty() || trials == 0 {
        return Err(Error::domain("study needs at least one level and one trial"));
    }
    for w in n_list.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::domain("study levels must be strictly ascending"));
        }
    }
    for &n in n_list {
        if n == 0 || spec.n_fine % n != 0 {
            return Err(Error::domain(format!(
                "study level {n} must divide the fine resolution {}",
                spec.n_fine
            )));
        }
    }
    let n_eval = n_list[0];
    let mut dists = vec![Vec::with_capacity(trials); n_list.len()];
    for t in 0..trials {
        let sub = spec.with_seed(mix64(spec.seed, t as u64));
        let omega = sample_q_wiener(&sub, 0.0, 1.0)?;
        for (li, &n) in n_list.iter().enumerate() {
            dists[li].push(area_level_distance(model, params, &omega, n, n_eval)?);
        }
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for (li, &n) in n_list.iter().enumerate() {
        let mut sorted = dists[li].clone();
        sorted.sort_by(f64::total_cmp);
        rows.push(StudyRow {
            n,
            median_d: quantile(&sorted, 0.5),
            q25: quantile(&sorted, 0.25),
            q75: quantile(&sorted, 0.75),
            slope: f64::NAN,
        });
    }
    for i in 0..rows.len().saturating_sub(1) {
        let (m0, m1) = (rows[i].median_d, rows[i + 1].median_d);
        let ratio = (rows[i + 1].n as f64 / rows[i].n as f64).log2();
        rows[i].slope = if m0 > 0.0 && m1 > 0.0 {
            (m0 / m1).log2() / ratio
        } else {
            f64::NAN
        };
    }
    Ok(rows)
}

/// Quantile with linear interpolation of a sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Write a study as a delimited table: `#`-prefixed header, then one row
/// `n  median_d  q25  q75  slope` per level.
pub fn write_study_table<W: Write>(rows: &[StudyRow], mut out: W) -> io::Result<()> {
    writeln!(out, "# area-convergence study  levels={}", rows.len())?;
    writeln!(out, "# n\tmedian_d\tq25\tq75\tslope")?;
    for r in rows {
        writeln!(
            out,
            "{}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}",
            r.n, r.median_d, r.q25, r.q75, r.slope
        )?;
    }
    Ok(())
}

/// Remainder of the semigroup convolution against the plain increment,
/// anchored at node `js`: component `(i,j)` of the result at time `t` is
/// `−λ_i ∫_{t_s}^t e^{−λ_i(t−r)}(ω_j(r)−ω_j(t_s)) dr`, stored at index
/// `i·m + j` of a path on `[t_s, t1]`. Exact per-segment arithmetic.
///
/// This is the smooth part of an area: the convolved increment equals the
/// plain increment plus this remainder, and the convolved area equals the
/// plain Lévy area plus the integral of this path against the driver (see
/// [`area_decomposition_residual`]). Its sample regularity is better than
/// the driver's — measure it with
/// [`holder_seminorm`](crate::paths::holder_seminorm) at an exponent above
/// 1/2, or watch its square variation vanish via [`square_variation`].
pub fn remainder_path(model: &SpectralModel, omega: &GridPath, js: usize) -> Result<GridPath> {
    omega.check_finite()?;
    let n = omega.n_steps();
    if js >= n {
        return Err(Error::domain(format!(
            "remainder anchor {js} leaves no window before node {n}"
        )));
    }
    let mi = model.m();
    let md = omega.m();
    let h = omega.h();
    let lambdas = model.eigenvalues();
    let decay: Vec<f64> = lambdas.iter().map(|&l| (-l * h).exp()).collect();
    let e0: Vec<f64> = lambdas.iter().map(|&l| tables::e0(l, h)).collect();
    let e1r: Vec<f64> = lambdas.iter().map(|&l| tables::e1r(l, h)).collect();
    let mut out = GridPath::zeros(omega.time(js), omega.t1(), mi * md, n - js);
    let base = omega.node(js).to_vec();
    let mut cur = vec![0.0; mi * md];
    for k in js..n {
        let a = omega.node(k);
        let b = omega.node(k + 1);
        for i in 0..mi {
            let lam = lambdas[i];
            for j in 0..md {
                let g = a[j] - base[j];
                let slope = (b[j] - a[j]) / h;
                let c = i * md + j;
                cur[c] = decay[i] * cur[c] - lam * (g * e0[i] + slope * (h * e0[i] - e1r[i]));
            }
        }
        out.node_mut(k + 1 - js).copy_from_slice(&cur);
    }
    Ok(out)
}

/// Square variation `Σ ‖Δpath‖²` over an equispaced partition with `parts`
/// pieces. For paths smoother than the driver (like [`remainder_path`]
/// output) this vanishes under refinement; for the driver itself it
/// stabilizes near the trace times the interval length.
pub fn square_variation(path: &GridPath, parts: usize) -> Result<f64> {
    let n = path.n_steps();
    if parts == 0 || n % parts != 0 {
        return Err(Error::domain(format!(
            "partition size {parts} must divide the step count {n}"
        )));
    }
    let stride = n / parts;
    let mut s = 0.0;
    for p in 0..parts {
        let a = path.node(p * stride);
        let b = path.node((p + 1) * stride);
        for j in 0..path.m() {
            let d = b[j] - a[j];
            s += d * d;
        }
    }
    Ok(s)
}

/// Residual of the area decomposition
/// `a[i][j][l](s,t) = L[j][l](s,t) + ∫_s^t F^{(i,j)}_s(ξ) dω_l(ξ)`
/// over one grid window: max over `(i,j,l)` of the defect between the
/// convolved area and the plain Lévy area plus the remainder integral.
///
/// The left side and the Lévy area are exact; the remainder integral is
/// composite-Simpson per segment with remainder values on the half grid
/// (midpoint driver values are exact node averages), so the residual is
/// quadrature-limited at order `h⁴` rather than identically zero.
pub fn area_decomposition_residual(
    model: &SpectralModel,
    omega: &GridPath,
    js: usize,
    jt: usize,
) -> Result<f64> {
    if js >= jt || jt > omega.n_steps() {
        return Err(Error::domain(format!(
            "window indices ({js}, {jt}) are not ordered within 0..={}",
            omega.n_steps()
        )));
    }
    let a_conv = area::convolved_area_at(model, omega, js, jt)?;
    let plain = area::plain_levy_area(omega, js, jt)?;
    let mi = model.m();
    let md = omega.m();
    let nw = jt - js;
    let mut half = GridPath::zeros(omega.time(js), omega.time(jt), md, 2 * nw);
    for k in 0..=nw {
        let node = omega.node(js + k).to_vec();
        half.node_mut(2 * k).copy_from_slice(&node);
    }
    for k in 0..nw {
        let mut mid = omega.node(js + k).to_vec();
        let b = omega.node(js + k + 1);
        for j in 0..md {
            mid[j] = 0.5 * (mid[j] + b[j]);
        }
        half.node_mut(2 * k + 1).copy_from_slice(&mid);
    }
    let f = remainder_path(model, &half, 0)?;
    let mut resid = 0.0_f64;
    let mut corr = vec![0.0; mi * md * md];
    for k in 0..nw {
        let a = omega.node(js + k);
        let b = omega.node(js + k + 1);
        let f0 = f.node(2 * k);
        let fm = f.node(2 * k + 1);
        let f1 = f.node(2 * k + 2);
        for c in 0..mi * md {
            let simpson = (f0[c] + 4.0 * fm[c] + f1[c]) / 6.0;
            for l in 0..md {
                corr[c * md + l] += simpson * (b[l] - a[l]);
            }
        }
    }
    for c in 0..mi * md {
        for l in 0..md {
            let j = c % md;
            let defect = a_conv[c * md + l] - plain[j * md + l] - corr[c * md + l];
            resid = resid.max(defect.abs());
        }
    }
    Ok(resid)
}

/// Double-sum diagnostic for the area distance between a fine path and its
/// `n`-level interpolant: for each component pair the discrete analogue of
/// `(∬ |ΔL(s,t)|^{2p} / (t−s)^{4β′p+2} ds dt)^{1/p}`, summed over pairs and
/// returned as a square root. Reported as a monitor of the refinement
/// behaviour; no closed-form target exists for its constant, so nothing
/// asserts against it.
pub fn grr_diagnostic(omega: &GridPath, n: usize, p: usize, beta_prime: f64) -> Result<f64> {
    if p == 0 {
        return Err(Error::domain("moment exponent p must be at least 1"));
    }
    if !(beta_prime > 0.0 && beta_prime < 1.0) {
        return Err(Error::domain(format!(
            "weight exponent β′ = {beta_prime} must sit in (0, 1)"
        )));
    }
    let omega_n = piecewise_linearize(omega, n)?;
    let n_steps = omega.n_steps();
    let md = omega.m();
    let block = md * md;
    let h = omega.h();
    let expo = 4.0 * beta_prime * p as f64 + 2.0;
    let weights: Vec<f64> = (1..=n_steps)
        .map(|k| (k as f64 * h).powf(-expo))
        .collect();
    let mut sums = vec![0.0_f64; block];
    let mut fine_rows: Vec<Vec<f64>> = Vec::new();
    for anchor in 0..n_steps {
        fine_rows.clear();
        area::walk_area_row(&[0.0], omega, anchor, n_steps, |_, acc| {
            fine_rows.push(acc.to_vec());
        });
        area::walk_area_row(&[0.0], &omega_n, anchor, n_steps, |kt1, acc| {
            let row = &fine_rows[kt1 - anchor - 1];
            let w = weights[kt1 - anchor - 1];
            for c in 0..block {
                let e = row[c] - acc[c];
                sums[c] += (e * e).powi(p as i32) * w;
            }
        });
    }
    let cell = h * h;
    let total: f64 = sums
        .iter()
        .map(|&s| (2.0 * cell * s).powf(1.0 / p as f64))
        .sum();
    Ok(total.sqrt())
}
