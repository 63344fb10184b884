//! Spectral and tangent-space diagnostics of instance feature matrices.
//!
//! Everything here operates on a [`FeatureMatrix`]: N instances in rows, d
//! features in columns. Row normalization is explicit and tracked by a flag so
//! the cosine-based neighbor graph and the Gram spectrum see the same data.

mod drift;
mod knn;
mod spectrum;
mod tangent;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{norm, Matrix};

pub use drift::{drift_curve, DriftBucket, DriftConfig, DriftCurve, MIN_BUCKET_PAIRS};
pub use knn::{knn_graph, NeighborGraph, DEFAULT_K};
pub use spectrum::{spectral_summary, summary_from_eigenvalues, SpectralSummary};
pub use tangent::{estimate_tangent_dim, local_tangent, tangent_drift, TangentBasis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    values: Matrix,
    normalized: bool,
}

impl FeatureMatrix {
    pub fn new(values: Matrix) -> Self {
        Self { values, normalized: false }
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Apply a linear map on the right (`F·W`); the result is unnormalized.
    pub fn transform(&self, map: &Matrix) -> Result<Self> {
        Ok(Self::new(self.values.matmul(map)?))
    }
}

impl From<Matrix> for FeatureMatrix {
    fn from(values: Matrix) -> Self {
        Self::new(values)
    }
}

/// Scale every row to unit L2 norm.
pub fn normalize_features(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut values = f.values.clone();
    for i in 0..values.rows() {
        let row = values.row_mut(i);
        let n = norm(row);
        if n == 0.0 || !n.is_finite() {
            return invalid(format!("row {i} has zero or non-finite norm and cannot be normalized"));
        }
        row.iter_mut().for_each(|x| *x /= n);
    }
    Ok(FeatureMatrix { values, normalized: true })
}

/// Normalize unless the flag says it already is.
pub(crate) fn ensure_normalized(f: &FeatureMatrix) -> Result<std::borrow::Cow<'_, FeatureMatrix>> {
    if f.normalized {
        Ok(std::borrow::Cow::Borrowed(f))
    } else {
        normalize_features(f).map(std::borrow::Cow::Owned)
    }
}
