//! Command implementations.
//!
//! Every command reads the effective [`RunConfig`] (file plus command-line
//! overrides), works on the fixed time span [0, 1], and emits tab-separated
//! tables whose first line echoes the configuration hash and the command
//! name. All numeric output uses 17 significant digits so tables from two
//! runs with the same configuration compare byte-for-byte.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use rough_evolution::area::{
    convolved_area, convolved_chen_residual, triple_chen_residual, write_area_table,
    ConvolvedArea,
};
use rough_evolution::driver::{area_convergence_study, sample_q_wiener, write_study_table};
use rough_evolution::fraccalc::{frac_deriv_left, frac_deriv_right, pathwise_integral};
use rough_evolution::hypothesis::validate_params;
use rough_evolution::nonlin::Nonlinearity;
use rough_evolution::paths::{chen_residual, GridPath, TwoForm};
use rough_evolution::series::Series;
use rough_evolution::solver::{
    approximation_convergence, calibrate, classical_mild_solve, fixed_point_solve,
    write_convergence_table, write_solve_report, SolveReport, SolverSchedule,
};
use rough_evolution::spectral::{estimate_suite, fractional_norm, SpectralModel};
use rough_evolution::tables::gamma_pos;

use crate::config::RunConfig;

/// Direction of a convergence run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Which {
    /// Level-wise distance of driver areas to the fine-grid reference.
    Area,
    /// Distance of smoothed-driver solves to the fixed-point solution.
    Solution,
}

/// Oracle gap below which a smoothed-driver comparison counts as agreeing.
const ORACLE_GAP_THRESHOLD: f64 = 2e-3;

fn header(cfg: &RunConfig, command: &str) -> String {
    format!("# config-hash {}  command {command}\n", cfg.hash_hex())
}

fn open_out(cfg: &RunConfig, name: &str) -> Result<(BufWriter<File>, PathBuf)> {
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("cannot create output directory {}", cfg.out_dir.display()))?;
    let path = cfg.out_dir.join(name);
    let file =
        File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok((BufWriter::new(file), path))
}

/// Keep every `stride`-th node of a finer path.
fn restrict(path: &GridPath, n: usize) -> Result<GridPath> {
    if n == 0 || path.n_steps() % n != 0 {
        bail!(
            "step count {n} must be a positive divisor of the sampled resolution {}",
            path.n_steps()
        );
    }
    let stride = path.n_steps() / n;
    Ok(GridPath::from_fn(
        path.t0(),
        path.t1(),
        path.m(),
        n,
        |k, _t, out| out.copy_from_slice(path.node(k * stride)),
    ))
}

fn write_path_table(
    cfg: &RunConfig,
    command: &str,
    label: &str,
    path: &GridPath,
    name: &str,
) -> Result<PathBuf> {
    let (mut out, file_path) = open_out(cfg, name)?;
    out.write_all(header(cfg, command).as_bytes())?;
    writeln!(
        out,
        "# {label}  m={}  n_steps={}  t0={:.16e}  t1={:.16e}",
        path.m(),
        path.n_steps(),
        path.t0(),
        path.t1()
    )?;
    write!(out, "# t")?;
    for i in 0..path.m() {
        write!(out, "\tx_{i}")?;
    }
    writeln!(out)?;
    for k in 0..=path.n_steps() {
        write!(out, "{:.16e}", path.time(k))?;
        for &v in path.node(k) {
            write!(out, "\t{v:.16e}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(file_path)
}

fn write_two_form_table(
    cfg: &RunConfig,
    command: &str,
    label: &str,
    v: &TwoForm,
    name: &str,
) -> Result<PathBuf> {
    let (mut out, file_path) = open_out(cfg, name)?;
    out.write_all(header(cfg, command).as_bytes())?;
    writeln!(
        out,
        "# {label}  rows={}  cols={}  n_steps={}  t0={:.16e}  t1={:.16e}",
        v.rows(),
        v.cols(),
        v.n_steps(),
        v.t0(),
        v.t1()
    )?;
    writeln!(out, "# s_index\tt_index\tentries (row-major)")?;
    for j in 0..=v.n_steps() {
        for k in j..=v.n_steps() {
            write!(out, "{j}\t{k}")?;
            for &x in v.block(j, k) {
                write!(out, "\t{x:.16e}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(file_path)
}

/// Everything the solve pipeline produces before table emission.
struct SolveOutput {
    model: SpectralModel,
    g: Box<dyn Nonlinearity>,
    omega: GridPath,
    area: ConvolvedArea,
    report: SolveReport,
    c_cal: f64,
    intervals_k: usize,
}

/// Shared pipeline: sample the fine driver, restrict it to the solver grid,
/// build the convolved area, calibrate the interval count, and run the
/// fixed-point solve.
fn run_solve(cfg: &RunConfig) -> Result<SolveOutput> {
    let model = cfg.model()?;
    let params = cfg.params();
    let g = cfg.nonlinearity(&model)?;
    let spec = cfg.driver()?;
    let fine = sample_q_wiener(&spec, 0.0, 1.0).map_err(|e| anyhow!("driver sampling: {e}"))?;
    let omega = restrict(&fine, cfg.n_steps)?;
    let area = convolved_area(&model, &omega).map_err(|e| anyhow!("area construction: {e}"))?;
    let (c_cal, k) = calibrate(&model, g.as_ref(), &params, &omega, &area)
        .map_err(|e| anyhow!("calibration: {e}"))?;
    if k > cfg.k_cap {
        bail!(
            "calibration needs {k} intervals but `solver.k_cap` is {}; raise the cap, \
             shrink the driver or nonlinearity amplitude, or refine the grid",
            cfg.k_cap
        );
    }
    let rho0 = fractional_norm(&model, cfg.delta, &cfg.u0);
    let schedule = SolverSchedule::new(k, rho0, c_cal, cfg.tol, cfg.max_iter)
        .map_err(|e| anyhow!("schedule construction: {e}"))?;
    let report = fixed_point_solve(&model, g.as_ref(), &cfg.u0, &omega, &area, &schedule, &params)
        .map_err(|e| anyhow!("fixed-point solve: {e}"))?;
    Ok(SolveOutput {
        model,
        g,
        omega,
        area,
        report,
        c_cal,
        intervals_k: k,
    })
}

fn write_area_summary(
    cfg: &RunConfig,
    command: &str,
    model: &SpectralModel,
    area: &ConvolvedArea,
) -> Result<()> {
    let (mut out, _) = open_out(cfg, "area_summary.tsv")?;
    out.write_all(header(cfg, command).as_bytes())?;
    writeln!(out, "# convolved-area summary  n_steps={}", area.n_steps())?;
    writeln!(out, "# s_index\tt_index\ths_norm")?;
    let n = area.n_steps();
    for k in 0..n {
        writeln!(out, "{k}\t{}\t{:.16e}", k + 1, area.hs_norm(model, k, k + 1))?;
    }
    writeln!(out, "0\t{n}\t{:.16e}", area.hs_norm(model, 0, n))?;
    out.flush()?;
    Ok(())
}

fn write_solve_tables(cfg: &RunConfig, command: &str, sol: &SolveOutput) -> Result<()> {
    write_path_table(cfg, command, "driver path", &sol.omega, "driver.tsv")?;
    write_area_summary(cfg, command, &sol.model, &sol.area)?;
    write_path_table(
        cfg,
        command,
        "solution path",
        &sol.report.pair.u,
        "solution_u.tsv",
    )?;
    write_two_form_table(
        cfg,
        command,
        "solution two-form",
        &sol.report.pair.v,
        "solution_v.tsv",
    )?;
    let (mut out, _) = open_out(cfg, "solve_report.tsv")?;
    out.write_all(header(cfg, command).as_bytes())?;
    writeln!(
        out,
        "# calibration  c_cal={:.16e}  intervals={}",
        sol.c_cal, sol.intervals_k
    )?;
    write_solve_report(&sol.report, &mut out).map_err(|e| anyhow!("report emission: {e}"))?;
    out.flush()?;
    Ok(())
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    let params = cfg.params();
    let violations = validate_params(&params);
    cfg.model()?;
    cfg.driver()?;
    if violations.is_empty() {
        println!("configuration admissible  config-hash {}", cfg.hash_hex());
        return Ok(());
    }
    for v in &violations {
        println!("violation: {v}");
    }
    bail!("{} admissibility violation(s)", violations.len());
}

pub fn cmd_sample_driver(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.driver()?;
    let fine = sample_q_wiener(&spec, 0.0, 1.0).map_err(|e| anyhow!("driver sampling: {e}"))?;
    let path = write_path_table(cfg, "sample-driver", "driver path", &fine, "driver.tsv")?;
    println!(
        "sampled driver  m={}  n_fine={}  -> {}",
        fine.m(),
        fine.n_steps(),
        path.display()
    );
    Ok(())
}

pub fn cmd_build_area(cfg: &RunConfig) -> Result<()> {
    let model = cfg.model()?;
    let spec = cfg.driver()?;
    let fine = sample_q_wiener(&spec, 0.0, 1.0).map_err(|e| anyhow!("driver sampling: {e}"))?;
    let omega = restrict(&fine, cfg.n_steps)?;
    let area = convolved_area(&model, &omega).map_err(|e| anyhow!("area construction: {e}"))?;
    let (mut out, path) = open_out(cfg, "area.tsv")?;
    out.write_all(header(cfg, "build-area").as_bytes())?;
    write_area_table(&area, &mut out)?;
    out.flush()?;
    write_area_summary(cfg, "build-area", &model, &area)?;
    println!(
        "built convolved area  n_steps={}  full-span hs_norm={:.6e}  -> {}",
        area.n_steps(),
        area.hs_norm(&model, 0, area.n_steps()),
        path.display()
    );
    Ok(())
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<()> {
    let sol = run_solve(cfg)?;
    write_solve_tables(cfg, "solve", &sol)?;
    let worst_ratio = sol
        .report
        .intervals
        .iter()
        .fold(0.0f64, |a, r| a.max(r.contraction_ratio));
    println!(
        "solved  intervals={}  worst_contraction_ratio={:.6e}  chen_residual={:.6e}",
        sol.report.intervals.len(),
        worst_ratio,
        sol.report.chen
    );
    Ok(())
}

pub fn cmd_oracle_solve(cfg: &RunConfig) -> Result<()> {
    let sol = run_solve(cfg)?;
    write_solve_tables(cfg, "oracle-solve", &sol)?;
    let oracle = classical_mild_solve(&sol.model, sol.g.as_ref(), &cfg.u0, &sol.omega)
        .map_err(|e| anyhow!("classical march: {e}"))?;
    write_path_table(cfg, "oracle-solve", "classical-march path", &oracle, "oracle_u.tsv")?;
    let mut gap = 0.0f64;
    for k in 0..=sol.omega.n_steps() {
        for (a, b) in sol.report.pair.u.node(k).iter().zip(oracle.node(k)) {
            gap = gap.max((a - b).abs());
        }
    }
    let (mut out, _) = open_out(cfg, "oracle_summary.tsv")?;
    out.write_all(header(cfg, "oracle-solve").as_bytes())?;
    writeln!(out, "# classical-march comparison  n_steps={}", sol.omega.n_steps())?;
    writeln!(out, "sup_gap\t{gap:.16e}")?;
    writeln!(out, "threshold\t{ORACLE_GAP_THRESHOLD:.16e}")?;
    writeln!(
        out,
        "within_threshold\t{}",
        if gap <= ORACLE_GAP_THRESHOLD { 1 } else { 0 }
    )?;
    out.flush()?;
    println!(
        "oracle gap  sup={gap:.6e}  threshold={ORACLE_GAP_THRESHOLD:.1e}  within={}",
        gap <= ORACLE_GAP_THRESHOLD
    );
    Ok(())
}

pub fn cmd_chen_check(cfg: &RunConfig) -> Result<()> {
    if cfg.n_steps < 4 {
        bail!("chen-check needs `solver.n_steps` >= 4");
    }
    let sol = run_solve(cfg)?;
    let params = cfg.params();
    let n = sol.omega.n_steps();
    let pair_res = chen_residual(&sol.report.pair.u, &sol.omega, &sol.report.pair.v);
    let conv_res = convolved_chen_residual(&sol.model, &sol.omega, &sol.area, 0, n / 2, n)
        .map_err(|e| anyhow!("convolved identity: {e}"))?;
    let triple_res = triple_chen_residual(
        &sol.report.pair.u,
        &sol.report.pair.v,
        &sol.model,
        &sol.omega,
        &sol.area,
        0,
        n / 4,
        n / 2,
        &params,
    )
    .map_err(|e| anyhow!("triple identity: {e}"))?;
    let (mut out, path) = open_out(cfg, "chen_report.tsv")?;
    out.write_all(header(cfg, "chen-check").as_bytes())?;
    writeln!(out, "# algebraic-identity residuals  n_steps={n}")?;
    writeln!(out, "pair_residual\t{pair_res:.16e}")?;
    writeln!(out, "convolved_residual\t{conv_res:.16e}")?;
    writeln!(out, "triple_residual\t{triple_res:.16e}")?;
    out.flush()?;
    println!(
        "chen residuals  pair={pair_res:.6e}  convolved={conv_res:.6e}  \
         triple={triple_res:.6e}  -> {}",
        path.display()
    );
    Ok(())
}

pub fn cmd_convergence(cfg: &RunConfig, which: Which) -> Result<()> {
    match which {
        Which::Area => {
            let model = cfg.model()?;
            let params = cfg.params();
            let spec = cfg.driver()?;
            let rows =
                area_convergence_study(&spec, &params, &model, &cfg.study_levels, cfg.study_trials)
                    .map_err(|e| anyhow!("area study: {e}"))?;
            let (mut out, path) = open_out(cfg, "convergence_area.tsv")?;
            out.write_all(header(cfg, "convergence").as_bytes())?;
            write_study_table(&rows, &mut out)?;
            out.flush()?;
            println!(
                "area convergence  levels={}  final_median={:.6e}  -> {}",
                rows.len(),
                rows.last().map_or(f64::NAN, |r| r.median_d),
                path.display()
            );
        }
        Which::Solution => {
            let sol = run_solve(cfg)?;
            let params = cfg.params();
            let rows = approximation_convergence(
                &sol.model,
                sol.g.as_ref(),
                &cfg.u0,
                &sol.omega,
                &sol.area,
                &cfg.study_levels,
                &params,
                cfg.tol,
            )
            .map_err(|e| {
                anyhow!("solution study: {e}; `study.levels` must ascend and divide `solver.n_steps`")
            })?;
            let (mut out, path) = open_out(cfg, "convergence_solution.tsv")?;
            out.write_all(header(cfg, "convergence").as_bytes())?;
            write_convergence_table(&rows, &mut out)
                .map_err(|e| anyhow!("table emission: {e}"))?;
            out.flush()?;
            println!(
                "solution convergence  levels={}  final_error={:.6e}  -> {}",
                rows.len(),
                rows.last().map_or(f64::NAN, |r| r.error),
                path.display()
            );
        }
    }
    Ok(())
}

pub fn cmd_estimate_suite(cfg: &RunConfig) -> Result<()> {
    let model = cfg.model()?;
    let params = cfg.params();
    let t_grid: Vec<f64> = (0..32)
        .map(|i| 1e-3 * 1000f64.powf(i as f64 / 31.0))
        .collect();
    let suite = estimate_suite(&model, &params, &t_grid)
        .map_err(|e| anyhow!("estimate measurement: {e}"))?;
    let (mut out, path) = open_out(cfg, "estimates.tsv")?;
    out.write_all(header(cfg, "estimate-suite").as_bytes())?;
    writeln!(out, "# measured semigroup constants  t_grid_len={}", t_grid.len())?;
    writeln!(out, "# label\texponent\tvalue")?;
    for c in suite
        .smoothing
        .iter()
        .chain(suite.hold.iter())
        .chain([&suite.four_point_difference, &suite.four_point_double])
    {
        writeln!(out, "{}\t{:.16e}\t{:.16e}", c.label, c.exponent, c.value)?;
    }
    out.flush()?;
    println!(
        "measured {} semigroup constants  -> {}",
        suite.smoothing.len() + suite.hold.len() + 2,
        path.display()
    );
    Ok(())
}

pub fn cmd_fraccalc_selftest() -> Result<()> {
    let mut failures = 0usize;
    let mut check = |name: &str, err: f64, tol: f64| {
        let ok = err <= tol;
        println!(
            "{} {name}  max_err={err:.3e}  tol={tol:.1e}",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failures += 1;
        }
    };

    let n = 256usize;
    let h = 1.0 / n as f64;
    for &alpha in &[0.45, 0.55, 0.665] {
        // Left derivative of the linear ramp against its power-rule value.
        let ramp = Series::from_fn(1, n + 1, |j, out| out[0] = j as f64 * h);
        let d = frac_deriv_left(&ramp, alpha, h).map_err(|e| anyhow!("left derivative: {e}"))?;
        let mut worst = 0.0f64;
        for j in 1..n {
            let r = j as f64 * h;
            let expect = r.powf(1.0 - alpha) / gamma_pos(2.0 - alpha);
            worst = worst.max((d.node(j)[0] - expect).abs());
        }
        check(&format!("left-power-rule alpha={alpha}"), worst, 1e-10);

        // Right derivative of order 1−α of the ramp: the magnitude follows
        // the complementary power rule.
        let d = frac_deriv_right(&ramp, 1.0 - alpha, h)
            .map_err(|e| anyhow!("right derivative: {e}"))?;
        let mut worst = 0.0f64;
        for j in 1..n {
            let br = 1.0 - j as f64 * h;
            let expect = br.powf(alpha) / gamma_pos(1.0 + alpha);
            worst = worst.max((d.node(j)[0].abs() - expect).abs());
        }
        check(&format!("right-power-rule order={}", 1.0 - alpha), worst, 1e-10);
    }

    // Pathwise pairing of a smooth pair against the closed-form integral
    // of sin(pi r) against r^2 over [0, 1].
    let n = 512usize;
    let h = 1.0 / n as f64;
    let g = Series::from_fn(1, n + 1, |j, out| {
        out[0] = (std::f64::consts::PI * j as f64 * h).sin()
    });
    let zeta = Series::from_fn(1, n + 1, |j, out| out[0] = (j as f64 * h).powi(2));
    let val = pathwise_integral(&g, &zeta, 0.665, 0.49, h)
        .map_err(|e| anyhow!("pathwise pairing: {e}"))?;
    let expect = 2.0 / std::f64::consts::PI;
    check("pathwise-smooth-pair", (val[0] - expect).abs(), 1e-3);

    if failures > 0 {
        bail!("{failures} self-test check(s) failed");
    }
    Ok(())
}
