//! Numerical toolkit for Langevin bridges.
//!
//! * [`potentials`]: drift potentials, reciprocal potential and characteristic, convexity scans.
//! * [`bridge`]: bridge drifts, Feynman–Kac ψ estimates, Euler–Maruyama paths.
//! * [`couplings`]: synchronous couplings, sinh envelopes, gradient estimates, 1D comparison.
//! * [`pathspace`]: the α-inner product, simple functionals, concentration checks.
//! * [`stein`]: path-space OU semigroup and generator, the Stein constant and W₁ bounds.
//! * [`invariant`]: Schrödinger ground states, marginal convergence, contraction.
//! * [`projection`]: convex-cost projections on finite path spaces.
//! * [`mc`]: deterministic parallel Monte Carlo and 1D Wasserstein distances.

pub mod bridge;
pub mod couplings;
pub mod error;
pub mod hyper;
pub mod invariant;
pub mod linalg;
pub mod mc;
pub mod pathspace;
pub mod potentials;
pub mod projection;
pub mod stein;

pub use error::{Error, Result};
