//! Flat `key = value` run configuration.
//!
//! The file is hand-editable structured text: `[section]` headers followed
//! by one `key = value` pair per line, `#` or `;` comments, no nesting.
//! Every field has a documented default, so an empty file is a valid
//! configuration. Parsing is strict — unknown sections or keys and
//! duplicate assignments are errors naming the offending line, since a
//! silently ignored typo would change a run without leaving a trace.
//!
//! The effective configuration (after command-line overrides) has a
//! canonical serialization whose FNV-1a hash is echoed in the header of
//! every emitted table; two tables with the same hash came from the same
//! effective settings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rough_evolution::driver::DriverSpec;
use rough_evolution::hypothesis::HolderParams;
use rough_evolution::nonlin::{
    kernel_nonlinearity, lattice_nonlinearity, Activation, Nonlinearity,
};
use rough_evolution::spectral::{laplacian_model, SpectralModel};

/// Effective settings for one run, after defaults and overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model_kind: String,
    pub m: usize,
    pub delta: f64,
    pub eigenvalues: Option<Vec<f64>>,
    pub beta: f64,
    pub beta_prime: f64,
    pub alpha: f64,
    pub hurst: f64,
    pub q_weights: Vec<f64>,
    pub seed: u64,
    pub n_fine: usize,
    pub g_kind: String,
    pub kappa: f64,
    pub activation: String,
    pub n_steps: usize,
    pub u0: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub k_cap: usize,
    pub out_dir: PathBuf,
    pub study_levels: Vec<usize>,
    pub study_trials: usize,
}

/// One parsed assignment with its source line for error context.
struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find(['#', ';']) {
            Some(p) => &raw[..p],
            None => raw,
        };
        let s = stripped.trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| anyhow!("line {line}: unterminated section header `{s}`"))?;
            section = name.trim().to_string();
            if section.is_empty() {
                bail!("line {line}: empty section name");
            }
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("line {line}: expected `key = value`, got `{s}`"))?;
        let key = key.trim();
        if key.is_empty() {
            bail!("line {line}: empty key");
        }
        if section.is_empty() {
            bail!("line {line}: key `{key}` appears before any [section] header");
        }
        out.push(Entry {
            section: section.clone(),
            key: key.to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(e: &Entry, what: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    e.value
        .split_whitespace()
        .map(|tok| {
            tok.parse::<T>().with_context(|| {
                format!(
                    "line {}: field `{}.{}`: `{tok}` is not {what}",
                    e.line, e.section, e.key
                )
            })
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(e: &Entry, what: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    e.value.parse::<T>().with_context(|| {
        format!(
            "line {}: field `{}.{}`: `{}` is not {what}",
            e.line, e.section, e.key, e.value
        )
    })
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = 4;
        RunConfig {
            model_kind: "laplacian".into(),
            m,
            delta: 0.75,
            eigenvalues: None,
            beta: 0.34,
            beta_prime: 0.49,
            alpha: 0.665,
            hurst: 0.5,
            q_weights: default_q_weights(m),
            seed: 1,
            n_fine: 256,
            g_kind: "lattice".into(),
            kappa: 0.8,
            activation: "tanh".into(),
            n_steps: 64,
            u0: default_u0(m),
            tol: 1e-6,
            max_iter: 64,
            k_cap: 1 << 16,
            out_dir: PathBuf::from("out"),
            study_levels: vec![4, 8, 16, 32, 64],
            study_trials: 8,
        }
    }
}

fn default_q_weights(m: usize) -> Vec<f64> {
    (0..m).map(|i| 0.5f64.powi(i as i32 + 1)).collect()
}

fn default_u0(m: usize) -> Vec<f64> {
    (0..m).map(|i| 0.3 / (i + 1) as f64).collect()
}

impl RunConfig {
    /// Parse a configuration file, applying defaults for absent keys.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read configuration file {}", path.display()))?;
        Self::from_str(&text)
    }

    fn from_str(text: &str) -> Result<RunConfig> {
        let entries = parse_entries(text)?;
        let mut cfg = RunConfig::default();
        let mut m_given = false;
        let mut q_given = false;
        let mut u0_given = false;
        let mut seen: Vec<(String, String)> = Vec::new();
        for e in &entries {
            let id = (e.section.clone(), e.key.clone());
            if seen.contains(&id) {
                bail!(
                    "line {}: field `{}.{}` assigned more than once",
                    e.line,
                    e.section,
                    e.key
                );
            }
            seen.push(id);
            match (e.section.as_str(), e.key.as_str()) {
                ("model", "kind") => {
                    if e.value != "laplacian" && e.value != "explicit" {
                        bail!(
                            "line {}: field `model.kind`: `{}` is not one of laplacian, explicit",
                            e.line,
                            e.value
                        );
                    }
                    cfg.model_kind = e.value.clone();
                }
                ("model", "m") => {
                    cfg.m = parse_one(e, "a positive integer")?;
                    m_given = true;
                }
                ("model", "delta") => cfg.delta = parse_one(e, "a number")?,
                ("model", "eigenvalues") => {
                    cfg.eigenvalues = Some(parse_list(e, "a number")?);
                }
                ("params", "beta") => cfg.beta = parse_one(e, "a number")?,
                ("params", "beta_prime") => cfg.beta_prime = parse_one(e, "a number")?,
                ("params", "alpha") => cfg.alpha = parse_one(e, "a number")?,
                ("params", "hurst") => cfg.hurst = parse_one(e, "a number")?,
                ("driver", "q_weights") => {
                    cfg.q_weights = parse_list(e, "a number")?;
                    q_given = true;
                }
                ("driver", "seed") => cfg.seed = parse_one(e, "an unsigned integer")?,
                ("driver", "n_fine") => cfg.n_fine = parse_one(e, "a positive integer")?,
                ("nonlinearity", "kind") => {
                    if !["lattice", "kernel", "zero"].contains(&e.value.as_str()) {
                        bail!(
                            "line {}: field `nonlinearity.kind`: `{}` is not one of \
                             lattice, kernel, zero",
                            e.line,
                            e.value
                        );
                    }
                    cfg.g_kind = e.value.clone();
                }
                ("nonlinearity", "kappa") => cfg.kappa = parse_one(e, "a number")?,
                ("nonlinearity", "activation") => {
                    if !["tanh", "zero", "linear"].contains(&e.value.as_str()) {
                        bail!(
                            "line {}: field `nonlinearity.activation`: `{}` is not one of \
                             tanh, zero, linear",
                            e.line,
                            e.value
                        );
                    }
                    cfg.activation = e.value.clone();
                }
                ("solver", "n_steps") => cfg.n_steps = parse_one(e, "a positive integer")?,
                ("solver", "u0") => {
                    cfg.u0 = parse_list(e, "a number")?;
                    u0_given = true;
                }
                ("solver", "tol") => cfg.tol = parse_one(e, "a number")?,
                ("solver", "max_iter") => cfg.max_iter = parse_one(e, "a positive integer")?,
                ("solver", "k_cap") => cfg.k_cap = parse_one(e, "a positive integer")?,
                ("output", "dir") => cfg.out_dir = PathBuf::from(&e.value),
                ("study", "levels") => {
                    cfg.study_levels = parse_list(e, "a positive integer")?;
                }
                ("study", "trials") => cfg.study_trials = parse_one(e, "a positive integer")?,
                (s, k) => bail!("line {}: unknown field `{s}.{k}`", e.line),
            }
        }
        if m_given {
            if !q_given {
                cfg.q_weights = default_q_weights(cfg.m);
            }
            if !u0_given {
                cfg.u0 = default_u0(cfg.m);
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.m == 0 {
            bail!("field `model.m` must be positive");
        }
        if let Some(ev) = &self.eigenvalues {
            if ev.len() != self.m {
                bail!(
                    "field `model.eigenvalues` has {} entries but `model.m` is {}",
                    ev.len(),
                    self.m
                );
            }
        } else if self.model_kind == "explicit" {
            bail!("`model.kind = explicit` needs `model.eigenvalues`");
        }
        if self.q_weights.len() != self.m {
            bail!(
                "field `driver.q_weights` has {} entries but `model.m` is {}",
                self.q_weights.len(),
                self.m
            );
        }
        if self.u0.len() != self.m {
            bail!(
                "field `solver.u0` has {} entries but `model.m` is {}",
                self.u0.len(),
                self.m
            );
        }
        if self.n_steps == 0 || self.n_fine == 0 {
            bail!("`solver.n_steps` and `driver.n_fine` must be positive");
        }
        if self.n_fine % self.n_steps != 0 {
            bail!(
                "`solver.n_steps` ({}) must divide `driver.n_fine` ({})",
                self.n_steps,
                self.n_fine
            );
        }
        Ok(())
    }

    /// Canonical serialization of the effective settings; the hash of this
    /// string labels every output table.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.16e}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(s, "model.kind={}", self.model_kind);
        let _ = writeln!(s, "model.m={}", self.m);
        let _ = writeln!(s, "model.delta={:.16e}", self.delta);
        if let Some(ev) = &self.eigenvalues {
            let _ = writeln!(s, "model.eigenvalues={}", list(ev));
        }
        let _ = writeln!(s, "params.beta={:.16e}", self.beta);
        let _ = writeln!(s, "params.beta_prime={:.16e}", self.beta_prime);
        let _ = writeln!(s, "params.alpha={:.16e}", self.alpha);
        let _ = writeln!(s, "params.hurst={:.16e}", self.hurst);
        let _ = writeln!(s, "driver.q_weights={}", list(&self.q_weights));
        let _ = writeln!(s, "driver.seed={}", self.seed);
        let _ = writeln!(s, "driver.n_fine={}", self.n_fine);
        let _ = writeln!(s, "nonlinearity.kind={}", self.g_kind);
        let _ = writeln!(s, "nonlinearity.kappa={:.16e}", self.kappa);
        let _ = writeln!(s, "nonlinearity.activation={}", self.activation);
        let _ = writeln!(s, "solver.n_steps={}", self.n_steps);
        let _ = writeln!(s, "solver.u0={}", list(&self.u0));
        let _ = writeln!(s, "solver.tol={:.16e}", self.tol);
        let _ = writeln!(s, "solver.max_iter={}", self.max_iter);
        let _ = writeln!(s, "solver.k_cap={}", self.k_cap);
        let _ = writeln!(
            s,
            "study.levels={}",
            self.study_levels
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "study.trials={}", self.study_trials);
        s
    }

    /// FNV-1a hash of the canonical serialization, as fixed-width hex.
    pub fn hash_hex(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in self.canonical().as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn model(&self) -> Result<SpectralModel> {
        let model = match self.eigenvalues.clone() {
            Some(ev) => SpectralModel::new(ev, self.delta),
            None => laplacian_model(self.m, self.delta),
        };
        model.map_err(|e| anyhow!("model configuration: {e}"))
    }

    pub fn params(&self) -> HolderParams {
        HolderParams {
            beta: self.beta,
            beta_prime: self.beta_prime,
            alpha: self.alpha,
            hurst: self.hurst,
            delta: self.delta,
        }
    }

    pub fn driver(&self) -> Result<DriverSpec> {
        DriverSpec::new(self.q_weights.clone(), self.seed, self.n_fine)
            .map_err(|e| anyhow!("driver configuration: {e}"))
    }

    pub fn nonlinearity(&self, model: &SpectralModel) -> Result<Box<dyn Nonlinearity>> {
        let act = match self.activation.as_str() {
            "tanh" => Activation::tanh(),
            "linear" => Activation::linear(),
            _ => Activation::zero(),
        };
        match self.g_kind.as_str() {
            "lattice" => Ok(Box::new(lattice_nonlinearity(model, self.kappa, act))),
            "kernel" => {
                let resolution = (2 * model.m()).max(16);
                let g = kernel_nonlinearity(model, sine_profile, act, resolution)
                    .map_err(|e| anyhow!("nonlinearity configuration: {e}"))?;
                Ok(Box::new(g))
            }
            _ => Ok(Box::new(lattice_nonlinearity(
                model,
                self.kappa,
                Activation::zero(),
            ))),
        }
    }
}

fn sine_profile(x: f64) -> f64 {
    (std::f64::consts::PI * x).sin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_the_defaults() {
        let cfg = RunConfig::from_str("").unwrap();
        assert_eq!(cfg.m, 4);
        assert_eq!(cfg.q_weights, vec![0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(cfg.n_steps, 64);
        assert_eq!(cfg.u0.len(), 4);
    }

    #[test]
    fn m_resizes_dependent_defaults() {
        let cfg = RunConfig::from_str("[model]\nm = 2\n").unwrap();
        assert_eq!(cfg.q_weights, vec![0.5, 0.25]);
        assert_eq!(cfg.u0.len(), 2);
    }

    #[test]
    fn errors_carry_line_and_field_context() {
        let err = RunConfig::from_str("[driver]\nseed = broken\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("driver.seed"), "{err}");
        let err = RunConfig::from_str("[solver]\nmystery = 1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown field `solver.mystery`"), "{err}");
        let err = RunConfig::from_str("stray = 1\n").unwrap_err().to_string();
        assert!(err.contains("before any [section]"), "{err}");
        let err = RunConfig::from_str("[model]\nm = 3\n[driver]\nq_weights = 0.5 0.25\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("q_weights"), "{err}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = RunConfig::from_str("[driver]\nseed = 1\nseed = 2\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("more than once"), "{err}");
    }

    #[test]
    fn hash_tracks_effective_settings() {
        let a = RunConfig::from_str("[driver]\nseed = 1\n").unwrap();
        let b = RunConfig::from_str("[driver]\nseed = 2\n").unwrap();
        assert_ne!(a.hash_hex(), b.hash_hex());
        let c = RunConfig::from_str("# comment only\n[driver]\nseed = 1\n").unwrap();
        assert_eq!(a.hash_hex(), c.hash_hex());
        assert_eq!(a.hash_hex().len(), 16);
    }

    #[test]
    fn explicit_kind_requires_eigenvalues() {
        let err = RunConfig::from_str("[model]\nkind = explicit\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("eigenvalues"), "{err}");
        let cfg = RunConfig::from_str(
            "[model]\nkind = explicit\nm = 2\neigenvalues = 1.0 4.0\n",
        )
        .unwrap();
        assert_eq!(cfg.model().unwrap().eigenvalues(), &[1.0, 4.0]);
    }
}
