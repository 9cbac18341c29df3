//! Discrete Gauss variational problem for signed vector measures on
//! condensers with Riesz kernels.
//!
//! A condenser is a finite family of discretized plates, each carrying a sign.
//! The crate assembles the regularized Riesz Gram matrix over all plate nodes
//! and external-field atoms, and on top of it provides
//!
//! * energies, the Gauss functional and weighted potentials ([`energy`]),
//! * energy-metric projection onto nonnegative cones, i.e. discrete balayage,
//!   plus equilibrium measures and capacities ([`projection`]),
//! * Frank-Wolfe solvers for the Gauss problem and the auxiliary problem with
//!   unconstrained plates ([`solver`]),
//! * the solvability threshold, truncation sweeps and the coarse
//!   nonsolvability bound ([`diagnostics`]).
//!
//! Discrete problems are always solvable because their feasible sets are
//! compact. Nonsolvability of the continuum problem shows up only as trends
//! across truncation sweeps of an unbounded plate.

pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod measures;
pub mod nnls;
pub mod projection;
pub mod scenario;
pub mod selftest;
pub mod solver;
pub mod tolerances;

pub use error::{GvpError, Result};
