//! End-to-end behavior of the command-line front end, driven through the
//! compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rough-evolution")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("the binary should launch")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.ini");
    std::fs::write(&path, text).expect("config should be writable");
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Data rows of a tab-separated table: comment lines stripped, fields parsed.
fn read_table(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            l.split('\t')
                .map(|f| f.parse::<f64>().expect("numeric field"))
                .collect()
        })
        .collect()
}

const SMALL_RUN: &str = "\
[model]
m = 2

[driver]
q_weights = 0.5 0.25
seed = 11
n_fine = 64

[solver]
n_steps = 16
u0 = 0.3 0.15

[output]
dir = out
";

#[test]
fn solving_twice_emits_byte_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_RUN);
    for out_dir in ["a", "b"] {
        let out = run_in(
            dir.path(),
            &["--config", "run.ini", "--out", out_dir, "solve"],
        );
        assert!(out.status.success(), "solve failed: {}", stderr(&out));
    }
    let names = [
        "driver.tsv",
        "area_summary.tsv",
        "solution_u.tsv",
        "solution_v.tsv",
        "solve_report.tsv",
    ];
    for name in names {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
        let first = a.split(|&c| c == b'\n').next().unwrap();
        assert!(
            first.starts_with(b"# config-hash "),
            "{name} is missing the hash header"
        );
    }
}

#[test]
fn validate_accepts_admissible_settings() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_RUN);
    let out = run_in(dir.path(), &["--config", "run.ini", "validate"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("admissible"), "{}", stdout(&out));
}

#[test]
fn validate_rejects_excess_path_regularity() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "[params]\nbeta_prime = 0.55\nhurst = 0.5\n",
    );
    let out = run_in(dir.path(), &["--config", "run.ini", "validate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stdout(&out).contains("beta_prime"),
        "the violated item should be named: {}",
        stdout(&out)
    );
}

#[test]
fn parse_errors_name_the_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[driver]\nseed = abc\n");
    let out = run_in(dir.path(), &["--config", "run.ini", "validate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("driver.seed"), "{err}");
}

#[test]
fn zero_nonlinearity_decays_with_the_semigroup() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "\
[model]
kind = explicit
m = 2
eigenvalues = 1.0 4.0

[driver]
q_weights = 0.5 0.25
seed = 5
n_fine = 32

[nonlinearity]
kind = zero

[solver]
n_steps = 8
u0 = 0.5 0.25

[output]
dir = out
",
    );
    let out = run_in(dir.path(), &["--config", "run.ini", "solve"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_table(&dir.path().join("out").join("solution_u.tsv"));
    assert_eq!(rows.len(), 9);
    let (lambdas, u0) = ([1.0, 4.0], [0.5, 0.25]);
    for row in rows {
        let t = row[0];
        for i in 0..2 {
            let expect = u0[i] * (-lambdas[i] * t).exp();
            assert!(
                (row[i + 1] - expect).abs() <= 1e-12,
                "decay mismatch at t={t}: {} vs {expect}",
                row[i + 1]
            );
        }
    }
}

#[test]
fn gentle_driver_oracle_gap_is_below_threshold() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "\
[model]
m = 2

[driver]
q_weights = 0.05 0.025
seed = 7
n_fine = 64

[solver]
n_steps = 16
u0 = 0.3 0.15

[output]
dir = out
",
    );
    let out = run_in(dir.path(), &["--config", "run.ini", "oracle-solve"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary =
        std::fs::read_to_string(dir.path().join("out").join("oracle_summary.tsv")).unwrap();
    assert!(
        summary.contains("within_threshold\t1"),
        "gap should be below threshold: {summary}"
    );
}

#[test]
fn seed_override_changes_the_reported_hash() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_RUN);
    let base = ["--config", "run.ini", "validate"];
    let one = stdout(&run_in(dir.path(), &base));
    let two = stdout(&run_in(
        dir.path(),
        &["--config", "run.ini", "--seed", "999", "validate"],
    ));
    let again = stdout(&run_in(dir.path(), &base));
    assert_ne!(one, two, "the seed override should change the hash");
    assert_eq!(one, again, "the hash should be stable run to run");
}

#[test]
fn single_level_area_study_self_comparison_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "\
[model]
m = 2

[driver]
q_weights = 0.5 0.25
seed = 3
n_fine = 64

[solver]
n_steps = 16
u0 = 0.3 0.15

[study]
levels = 64
trials = 3

[output]
dir = out
",
    );
    let out = run_in(
        dir.path(),
        &["--config", "run.ini", "convergence", "--which", "area"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_table(&dir.path().join("out").join("convergence_area.tsv"));
    assert_eq!(rows.len(), 1, "one level should give one row");
    assert_eq!(rows[0][0], 64.0);
    assert_eq!(rows[0][1], 0.0, "self-comparison distance should vanish");
}

#[test]
fn fraccalc_selftest_passes_without_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["fraccalc-selftest"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("PASS"), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
}
