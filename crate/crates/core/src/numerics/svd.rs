use serde::{Deserialize, Serialize};

use super::eig::{normalize_sign, sym_eig};
use super::matrix::{dot, norm};
use super::Matrix;
use crate::error::{invalid, Result};

/// Singular values below this fraction of σ₁ are reported as exactly zero.
pub const SINGULAR_FLOOR: f64 = 1e-12;

/// Thin singular value decomposition `A = U·diag(σ)·Vᵀ`.
///
/// For an m×n input `u` is m×k and `v` is n×k with k = min(m, n).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    /// Number of singular values above `rel_tol·σ₁`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        self.singular_values.iter().filter(|&&s| s > rel_tol * top).count()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.singular_values) {
                *x *= s;
            }
        }
        us.matmul_tr(&self.v).expect("svd factors have matching shapes")
    }
}

/// SVD through the eigendecomposition of the smaller Gram matrix.
///
/// Singular values are recomputed as `‖A·vᵢ‖` rather than `√λᵢ`, which keeps
/// the null directions at rounding level instead of at `√ε`. Left vectors are
/// recovered as `A·vᵢ/σᵢ`, re-orthogonalized, and completed to an orthonormal
/// set where σᵢ was clamped to zero.
pub fn svd(a: &Matrix, tol: f64) -> Result<SvdResult> {
    if !a.is_finite() {
        return invalid("svd input contains non-finite values");
    }
    if a.rows() < a.cols() {
        let t = svd(&a.transpose(), tol)?;
        return Ok(SvdResult { u: t.v, singular_values: t.singular_values, v: t.u });
    }
    let n = a.cols();
    let eig = sym_eig(&a.gram(), tol)?;
    let av = a.matmul(&eig.eigenvectors)?;

    let mut cols: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..n)
        .map(|j| {
            let w = av.col(j);
            (norm(&w), w, eig.eigenvectors.col(j))
        })
        .collect();
    cols.sort_by(|x, y| y.0.total_cmp(&x.0));

    let top = cols[0].0;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut singular_values = Vec::with_capacity(n);
    let mut v = Matrix::zeros(n, n);
    let mut pending = Vec::new();
    for (j, (s, w, vj)) in cols.into_iter().enumerate() {
        v.set_col(j, &vj);
        if top > 0.0 && s > SINGULAR_FLOOR * top {
            singular_values.push(s);
            let mut uj: Vec<f64> = w.iter().map(|x| x / s).collect();
            reorthogonalize(&mut uj, &u_cols);
            u_cols.push(uj);
        } else {
            singular_values.push(0.0);
            pending.push(j);
        }
    }
    for _ in pending {
        let filler = complete_basis(&u_cols, a.rows());
        u_cols.push(filler);
    }
    let mut u = Matrix::zeros(a.rows(), n);
    for (j, c) in u_cols.iter().enumerate() {
        u.set_col(j, c);
    }
    Ok(SvdResult { u, singular_values, v })
}

/// Project out `basis` and normalize; returns the norm of the residual before scaling.
fn reorthogonalize(x: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let p = dot(x, b);
            x.iter_mut().zip(b).for_each(|(xi, bi)| *xi -= p * bi);
        }
    }
    let nx = norm(x);
    if nx > 0.0 {
        x.iter_mut().for_each(|xi| *xi /= nx);
    }
    nx
}

/// A unit vector orthogonal to every vector in `basis` (which must be orthonormal
/// and have fewer than `dim` members).
fn complete_basis(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for e in 0..dim {
        let mut x = vec![0.0; dim];
        x[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let p = dot(&x, b);
                x.iter_mut().zip(b).for_each(|(xi, bi)| *xi -= p * bi);
            }
        }
        let nx = norm(&x);
        if nx > best_norm {
            best_norm = nx;
            best = Some(x);
        }
        if nx > 0.7 {
            break;
        }
    }
    let mut x = best.expect("basis already spans the space");
    x.iter_mut().for_each(|xi| *xi /= best_norm);
    normalize_sign(&mut x);
    x
}

/// Orthonormal basis for the column span of `a` (full column rank assumed),
/// by two-pass modified Gram-Schmidt.
pub fn orthonormalize_columns(a: &Matrix) -> Result<Matrix> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(a.cols());
    for j in 0..a.cols() {
        let mut c = a.col(j);
        let before = norm(&c);
        let residual = reorthogonalize(&mut c, &basis);
        if before == 0.0 || residual < 1e-10 * before {
            return invalid(format!("column {j} is linearly dependent on earlier columns"));
        }
        basis.push(c);
    }
    let mut q = Matrix::zeros(a.rows(), a.cols());
    for (j, c) in basis.iter().enumerate() {
        q.set_col(j, c);
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{RngStream, DEFAULT_TOL};

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::new(seed, 3);
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    fn orthonormal_cols(m: &Matrix) -> bool {
        m.gram().sub(&Matrix::identity(m.cols())).unwrap().max_abs() < 1e-10
    }

    #[test]
    fn diagonal() {
        let s = svd(&Matrix::from_diag(&[3.0, 2.0]), DEFAULT_TOL).unwrap();
        assert_eq!(s.singular_values, vec![3.0, 2.0]);
    }

    #[test]
    fn zero_matrix() {
        let s = svd(&Matrix::zeros(4, 3), DEFAULT_TOL).unwrap();
        assert_eq!(s.singular_values, vec![0.0; 3]);
        assert!(orthonormal_cols(&s.u));
        assert!(orthonormal_cols(&s.v));
        assert_eq!(s.rank(1e-10), 0);
    }

    #[test]
    fn rank_one_construction() {
        let u = [0.5, 0.5, 0.5, 0.5];
        let v = [2.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0];
        let a = Matrix::from_fn(4, 3, |i, j| 5.0 * u[i] * v[j]);
        let s = svd(&a, DEFAULT_TOL).unwrap();
        assert!((s.singular_values[0] - 5.0).abs() < 1e-13);
        assert_eq!(&s.singular_values[1..], &[0.0, 0.0]);
        // independent route: eigenvalues of AᵀA
        let e = sym_eig(&a.gram(), DEFAULT_TOL).unwrap();
        assert!((e.eigenvalues[0] - 25.0).abs() < 1e-12);
        assert!(e.eigenvalues[1].abs() < 1e-12 && e.eigenvalues[2].abs() < 1e-12);
        assert!(orthonormal_cols(&s.u));
    }

    #[test]
    fn wide_and_tall_reconstruct() {
        for (r, c, seed) in [(7, 3, 1), (3, 7, 2), (1, 1, 3), (64, 48, 4), (12, 12, 5)] {
            let a = random(r, c, seed);
            let s = svd(&a, DEFAULT_TOL).unwrap();
            let err = s.reconstruct().sub(&a).unwrap().frobenius_norm();
            assert!(err <= 1e-10 * a.frobenius_norm(), "{r}x{c}: {err}");
            assert!(orthonormal_cols(&s.u) && orthonormal_cols(&s.v));
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
            let energy: f64 = s.singular_values.iter().map(|x| x * x).sum();
            let fro2 = a.frobenius_norm().powi(2);
            assert!((energy - fro2).abs() <= 1e-9 * fro2);
        }
    }

    #[test]
    fn singular_values_agree_with_gram_eigenvalues() {
        let a = random(40, 25, 11);
        let s = svd(&a, DEFAULT_TOL).unwrap();
        let e = sym_eig(&a.gram(), DEFAULT_TOL).unwrap();
        for (sv, l) in s.singular_values.iter().zip(e.eigenvalues) {
            assert!((sv - l.sqrt()).abs() <= 1e-7 * sv);
        }
    }

    #[test]
    fn gram_schmidt() {
        let q = orthonormalize_columns(&random(10, 4, 9)).unwrap();
        assert!(orthonormal_cols(&q));
        let dup = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert!(orthonormalize_columns(&dup).is_err());
    }
}
