//! Deterministic sampling of multivariate standard normal densities with
//! point-symmetric, equally weighted Dirac mixtures, and sample-based
//! Kalman filtering built on those samples.
//!
//! The core of the crate is an optimizer that places `2L` (or `2L + 1`)
//! samples so that a modified Cramér-von Mises distance between the
//! localized cumulative distribution of the mixture and that of the
//! standard normal is minimal. Enforcing the point symmetry
//! `S = {s_1, -s_1, ..., s_L, -s_L}` makes every odd raw moment of the
//! mixture vanish identically, and a final whitening step makes the
//! sample covariance exactly the identity, so the mixture matches all
//! first and second moments of `N(0, I)` by construction while the
//! optimization spends its freedom on the shape of the distribution.
//!
//! On top of the sampler sit:
//!
//! * classic deterministic sampling baselines (unscented sets, a fifth
//!   degree cubature set, Gauss-Hermite tensor grids, randomized
//!   unscented mixtures) for comparison,
//! * a linear regression Kalman filter that drives any of the sampling
//!   schemes through nonlinear prediction and measurement updates,
//! * an extended object tracking scenario (a cylinder observed through
//!   noisy surface points) used to exercise the whole stack end to end,
//! * a binary cache for optimized sample sets, so that expensive
//!   optimizations run once per (dimension, sample count) pair.

pub mod baselines;
pub mod cache;
pub mod cylinder;
pub mod error;
pub mod eval;
pub mod lcd;
pub mod lrkf;
pub mod mixture;
pub mod optimizer;
pub mod quad;
pub mod special;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
