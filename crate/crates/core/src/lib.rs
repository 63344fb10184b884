//! Manifold-geometry diagnostics for instance features, the manifold residual
//! (MR) block, random-projection property checks and a few-shot
//! multiple-instance-learning harness.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod mil;
pub mod mrblock;
pub mod numerics;
pub mod randproj;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngStream};
