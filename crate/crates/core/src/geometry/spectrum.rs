use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{invalid, Result};
use crate::numerics::{sym_eig, DEFAULT_TOL};

/// Eigenvalues below this fraction of the largest are treated as zero.
const SPECTRUM_FLOOR: f64 = 1e-12;

/// Normalized Gram spectrum with its Von Neumann entropy (nats) and effective rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Strictly positive eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub entropy: f64,
    pub effective_rank: f64,
}

/// Spectrum of `K = F·Fᵀ` for a row-normalized feature matrix.
///
/// The eigenvalues come from whichever Gram (`FᵀF` or `FFᵀ`) is smaller; both
/// share the same nonzero spectrum.
pub fn spectral_summary(f: &FeatureMatrix) -> Result<SpectralSummary> {
    if !f.is_normalized() {
        return invalid("spectral_summary expects a row-normalized feature matrix");
    }
    let gram = if f.dim() <= f.n() { f.values().gram() } else { f.values().outer_gram() };
    let eig = sym_eig(&gram, DEFAULT_TOL)?;
    summary_from_eigenvalues(&eig.eigenvalues)
}

/// Entropy and effective rank of a nonnegative spectrum.
pub fn summary_from_eigenvalues(eigenvalues: &[f64]) -> Result<SpectralSummary> {
    let top = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(top > 0.0) || !top.is_finite() {
        return invalid("spectrum has no positive eigenvalue");
    }
    let mut kept: Vec<f64> =
        eigenvalues.iter().copied().filter(|&l| l > SPECTRUM_FLOOR * top).collect();
    kept.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = kept.iter().sum();
    let probabilities: Vec<f64> = kept.iter().map(|l| l / total).collect();
    let entropy = 0.0 - probabilities.iter().map(|&p| p * p.ln()).sum::<f64>();
    Ok(SpectralSummary {
        eigenvalues: kept,
        probabilities,
        entropy,
        effective_rank: entropy.exp(),
    })
}
