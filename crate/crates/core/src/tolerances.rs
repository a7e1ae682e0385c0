//! Numerical thresholds shared by construction checks and tests.

/// Orthonormality residual accepted when a manifold point is constructed.
pub const ORTH_CONSTRUCT: f64 = 1e-10;

/// Orthonormality residual allowed after long optimization chains.
pub const ORTH_CHAIN: f64 = 1e-8;

/// Tangent-space residual (`||sym(B^T U)||_F` or `||B^T U||_F`).
pub const TANGENT: f64 = 1e-9;

/// Smallest singular value of `B + U` for which the polar factor is defined.
pub const POLAR_SIGMA_MIN: f64 = 1e-12;

/// Lower bound on `|d2_i|`; the Woodbury identity divides by `d2^2`.
pub const D2_FLOOR: f64 = 1e-8;

/// Consecutive non-finite lower bounds tolerated before a run is declared divergent.
pub const DIVERGENCE_STREAK: usize = 50;
