//! Dense linear algebra and deterministic randomness.

mod eig;
mod matrix;
mod rng;
mod svd;

pub use eig::{sym_eig, EigenDecomposition, DEFAULT_TOL, MAX_SWEEPS};
pub use matrix::{dot, norm, Matrix};
pub use rng::{stream_key, RngStream};
pub use svd::{orthonormalize_columns, svd, SvdResult, SINGULAR_FLOOR};
