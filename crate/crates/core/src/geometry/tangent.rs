use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, NeighborGraph};
use crate::error::{dim_err, invalid, Result};
use crate::numerics::{svd, Matrix, DEFAULT_TOL};

/// Orthonormal basis (d × d_s) of the local tangent space at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentBasis {
    pub point: usize,
    pub basis: Matrix,
}

impl TangentBasis {
    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.rows()
    }
}

/// Centered neighborhood `{f_j − mean : j ∈ adj(i) ∪ {i}}`.
fn centered_neighborhood(f: &FeatureMatrix, graph: &NeighborGraph, i: usize) -> Result<Matrix> {
    if i >= f.n() || i >= graph.n() {
        return dim_err(format!("point {i} out of range"));
    }
    let mut idx = graph.neighbors(i).to_vec();
    idx.push(i);
    let mut y = f.values().select_rows(&idx)?;
    let m = idx.len() as f64;
    let mut mean = vec![0.0; y.cols()];
    for r in 0..y.rows() {
        mean.iter_mut().zip(y.row(r)).for_each(|(a, b)| *a += b / m);
    }
    let scale = y.frobenius_norm();
    for r in 0..y.rows() {
        y.row_mut(r).iter_mut().zip(&mean).for_each(|(a, b)| *a -= b);
    }
    if y.frobenius_norm() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return invalid(format!("neighborhood of point {i} has zero variance"));
    }
    Ok(y)
}

/// Local PCA: top-`d_s` principal directions of the centered neighborhood of point `i`.
pub fn local_tangent(
    f: &FeatureMatrix,
    graph: &NeighborGraph,
    i: usize,
    d_s: usize,
) -> Result<TangentBasis> {
    if d_s == 0 || d_s > f.dim() {
        return invalid(format!("tangent dimension {d_s} must be in 1..={}", f.dim()));
    }
    if i < graph.n() && graph.neighbors(i).len() < d_s {
        return invalid(format!(
            "point {i} has {} neighbors, fewer than tangent dimension {d_s}",
            graph.neighbors(i).len()
        ));
    }
    let y = centered_neighborhood(f, graph, i)?;
    let s = svd(&y, DEFAULT_TOL)?;
    Ok(TangentBasis { point: i, basis: s.v.leading_cols(d_s)? })
}

/// Smallest dimension whose principal directions hold at least `energy` of the
/// local covariance at point `reference`.
pub fn estimate_tangent_dim(
    f: &FeatureMatrix,
    graph: &NeighborGraph,
    reference: usize,
    energy: f64,
) -> Result<usize> {
    let y = centered_neighborhood(f, graph, reference)?;
    let s = svd(&y, DEFAULT_TOL)?;
    let power: Vec<f64> = s.singular_values.iter().map(|x| x * x).collect();
    let total: f64 = power.iter().sum();
    let mut acc = 0.0;
    for (i, p) in power.iter().enumerate() {
        acc += p;
        if acc >= energy * total {
            return Ok(i + 1);
        }
    }
    Ok(power.len())
}

/// `1 − ‖Viᵀ Vj‖²_F / d_s`, clamped to `[0, 1]`.
///
/// The squared entries are summed in sorted order so the result is bitwise
/// symmetric in its arguments.
pub fn tangent_drift(vi: &TangentBasis, vj: &TangentBasis) -> Result<f64> {
    if vi.basis.shape() != vj.basis.shape() {
        return dim_err(format!(
            "tangent bases differ in shape: {:?} vs {:?}",
            vi.basis.shape(),
            vj.basis.shape()
        ));
    }
    let (d, ds) = vi.basis.shape();
    let mut squares = Vec::with_capacity(ds * ds);
    for a in 0..ds {
        for b in 0..ds {
            let mut s = 0.0;
            for k in 0..d {
                s += vi.basis[(k, a)] * vj.basis[(k, b)];
            }
            squares.push(s * s);
        }
    }
    squares.sort_by(f64::total_cmp);
    let overlap: f64 = squares.iter().sum();
    Ok((1.0 - overlap / ds as f64).clamp(0.0, 1.0))
}
