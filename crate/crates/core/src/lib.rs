//! Pathwise solver for spectral evolution equations driven by low-regularity paths.
//!
//! The object of interest is the mild solution of
//!
//! ```text
//!     du(t) = A u(t) dt + G(u(t)) dω(t),        u(0) = u0,
//! ```
//!
//! on the time interval [0, 1], where `A` is a negative diagonal operator
//! (a spectral Galerkin truncation of, e.g., a Dirichlet Laplacian), `G` is a
//! smooth operator-valued nonlinearity, and the driver `ω` is only Hölder
//! continuous of some exponent β′ ∈ (1/3, 1/2] — too rough for Riemann–Stieltjes
//! integration against Hölder integrands.
//!
//! The integral ∫ S(t−r) G(u(r)) dω(r) is given meaning through fractional
//! (Weyl-type) derivatives: the integrand is differentiated to a fractional
//! order α from the left, the driver is "anti-differentiated" to the
//! complementary order 1−α from the right, and the pairing of the two is an
//! ordinary Lebesgue integral.  Because the integrand is no more regular than
//! the unknown itself, a first-order Taylor compensation is applied to the left
//! derivative, and the resulting correction terms are controlled by auxiliary
//! two-parameter objects: a semigroup-convolved Lévy area of the driver and a
//! tensor two-form coupling the solution to the driver.  The solution is then a
//! *pair* U = (u, v): the path together with its two-form, linked by a Chen
//! identity and constructed as the fixed point of a two-component map on a small
//! time interval, extended to [0, 1] by concatenation.
//!
//! Module map:
//!
//! * [`hypothesis`] — admissible exponent combinations and the modified Beta
//!   integral used by closed-form bounds.
//! * [`spectral`]   — diagonal models, semigroup action, fractional norms, and
//!   measured semigroup estimates.
//! * [`paths`]      — grid paths, two-forms, Hölder seminorms, Chen residuals.
//! * [`fraccalc`]   — fractional derivative operators and the pathwise integral.
//! * [`area`]       — convolved increments/areas, mixed and triple tensors.
//! * [`nonlin`]     — nonlinearity instances (lattice and integral-kernel) and
//!   their verified inequality suite.
//! * [`driver`]     — reproducible rough-driver sampling, Lévy areas, and area
//!   convergence studies.
//! * [`solver`]     — the two-component fixed-point map, scheduling,
//!   calibration, concatenation, and a classical oracle for smooth drivers.

pub mod area;
pub mod driver;
pub mod error;
pub mod fraccalc;
pub mod hypothesis;
pub mod nonlin;
pub mod paths;
pub mod series;
pub mod solver;
pub mod spectral;
pub mod tables;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
