//! Numerical toolkit for locating and certifying saddle-node (fold)
//! bifurcations of positive solutions to concave-convex elliptic systems
//!
//!   -Delta u_i = a_i(x) u_i^q + lambda g_i(x, u),   u_i = 0 on the boundary,
//!
//! with 0 < q_i < 1 and a cooperative superlinear coupling g.
//!
//! Two independent routes locate the extremal parameter: classical
//! pseudo-arclength continuation with fold refinement through the augmented
//! system {F = 0, F_u v = 0, |v| = 1}, and a variational route built on the
//! extended Rayleigh quotient R(u, v), whose inner infimum certifies each
//! stable solution and whose supremum over certified states estimates the
//! fold parameter from below. Cross-checks between the two routes, plus a
//! suite of discrete integral identities, are wired in as runtime
//! verification.

pub mod cli;
pub mod continuation;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod operator;
pub mod quotient;
pub mod spectral;
pub mod sublinear;

pub use error::{Error, Result};
