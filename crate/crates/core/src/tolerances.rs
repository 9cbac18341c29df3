//! Numerical tolerances used throughout the crate.
//!
//! | Constant | Value | Used for |
//! |----------|-------|----------|
//! | [`IDENTITY_REL`] | 1e-10 | algebraic identities between two routes to the same energy |
//! | [`IDENTITY_ABS`] | 1e-13 | absolute floor for the above |
//! | [`KKT_REL`] | 1e-8 | projection and variational KKT residuals, scaled |
//! | [`EQUILIBRIUM_REL`] | 1e-8 | `theta(X) = ||theta||^2 = C(E)` |
//! | [`GAP_REL`] | 1e-9 | Frank-Wolfe duality gap, times `1 + |value|` |
//! | [`MASS_BOUND_SLACK`] | 1e-6 | relative slack on `P nu(X) <= h nu+(X)` |
//! | [`VERDICT_REL`] | 1e-4 | solvability verdict band, times `a_ell` |
//! | [`NEG_RADICAND`] | 1e-12 | largest negative squared distance clamped to 0 |
//! | [`SHAPE_EQ`] | 1e-10 | generated points vs. their shape equation |

pub const IDENTITY_REL: f64 = 1e-10;
pub const IDENTITY_ABS: f64 = 1e-13;
pub const KKT_REL: f64 = 1e-8;
pub const EQUILIBRIUM_REL: f64 = 1e-8;
pub const GAP_REL: f64 = 1e-9;
pub const MASS_BOUND_SLACK: f64 = 1e-6;
pub const VERDICT_REL: f64 = 1e-4;
pub const NEG_RADICAND: f64 = 1e-12;
pub const SHAPE_EQ: f64 = 1e-10;

/// Initial and maximal ridge factors of the positive-definiteness guard.
pub const RIDGE_START: f64 = 1e-12;
pub const RIDGE_CAP: f64 = 1e-3;

/// Default diagonal shrink factor applied to nearest-neighbour distances.
pub const DEFAULT_SIGMA: f64 = 0.5;

/// Default minimum gap between oppositely signed plates.
pub const DEFAULT_MIN_GAP: f64 = 1e-6;

/// `|a - b| <= IDENTITY_REL * max(|a|, |b|) + IDENTITY_ABS`
pub fn identity_close(a: f64, b: f64) -> bool {
    rel_close(a, b, IDENTITY_REL, IDENTITY_ABS)
}

pub fn rel_close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + abs
}
