//! Numerical laboratory for damped second-order stochastic evolution
//! equations with memory.
//!
//! A wave-type equation `u'' + Au = Bu' + M u_t + N u'_t + R dZ` is reduced to
//! the first-order system `dy = Λy dt + F y_t dt + L dZ` on the energy space
//! `ℍ = D(A^{1/2}) × H`. All states are stored in the unitary coordinates
//! `(A^{1/2}u, u')`, so the energy norm is the plain Euclidean norm of the
//! coefficient vector.
//!
//! Modules, bottom up:
//!
//! * [`operator`]: the self-adjoint stiffness `A`, damping `B`, block generator
//!   `Λ₀` and its exact semigroup.
//! * [`spectral`]: spectral bounds, the Lyapunov operator and its envelope,
//!   resolvent norms and growth-bound certificates.
//! * [`delay`]: delay kernels, transfer operators, delay stability criteria,
//!   the structure operator and the Green operator (method of steps).
//! * [`sim`]: Monte-Carlo simulation of the Wiener- and Lévy-driven delay
//!   systems, paired-path coupling and variation-of-constants checks.
//! * [`stationarity`]: sufficient conditions for a unique stationary law,
//!   bounded-Lipschitz distance estimates and Cauchy-in-law diagnostics.
//! * [`scenario`]: the damped delay wave equation on `(0, 1)` used as the
//!   built-in example throughout.

pub mod delay;
pub mod error;
pub mod operator;
pub mod scenario;
pub mod sim;
pub mod spectral;
pub mod stationarity;

mod linalg;

pub use error::{Error, Result};
pub use nalgebra::Complex;

/// Complex scalar used for spectral quantities.
pub type C64 = Complex<f64>;
