//! Crate error type.

use thiserror::Error;

/// Errors reported by construction, validation and solver routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or exponent fell outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    /// An exponent combination violates the admissibility inequalities.
    /// The list contains one human-readable line per violated inequality.
    #[error("inadmissible parameters:\n{}", .0.join("\n"))]
    Inadmissible(Vec<String>),

    /// Two objects that must share a grid (or a mode count) do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A requested table would exceed the documented size caps.
    #[error("size cap exceeded: {0}")]
    CapExceeded(String),

    /// The fixed-point iteration failed to contract.
    #[error(
        "fixed-point iteration is not contracting on [{t0}, {t1}] \
         (last ratio {ratio:.3e}); decrease the interval length (increase K), \
         shrink the driver or nonlinearity amplitude, or refine the grid"
    )]
    NonContraction { t0: f64, t1: f64, ratio: f64 },

    /// The fixed-point iteration hit its iteration cap before meeting the
    /// tolerance.
    #[error(
        "fixed-point iteration on [{t0}, {t1}] did not reach tolerance \
         {tol:.3e} within {max_iter} iterations (last update {last:.3e})"
    )]
    MaxIter {
        t0: f64,
        t1: f64,
        tol: f64,
        max_iter: usize,
        last: f64,
    },

    /// Calibration could not find a contracting interval length.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// Malformed on-disk table or config content.
    #[error("parse error: {0}")]
    Parse(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Convenience constructor for `Error::Domain`.
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
