use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{dim_err, invalid, Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
///
/// Column `i` of `eigenvectors` belongs to `eigenvalues[i]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps until the off-diagonal Frobenius mass drops below `tol·‖A‖_F`.
/// Eigenvectors are sign-normalized so their largest-magnitude entry is positive.
pub fn sym_eig(a: &Matrix, tol: f64) -> Result<EigenDecomposition> {
    let n = a.rows();
    if a.cols() != n {
        return dim_err(format!("sym_eig needs a square matrix, got {}x{}", n, a.cols()));
    }
    if !a.is_finite() {
        return invalid("sym_eig input contains non-finite values");
    }
    let scale = a.frobenius_norm();
    if a.asymmetry() > tol * scale.max(f64::MIN_POSITIVE) {
        return invalid(format!(
            "matrix is not symmetric within tolerance (max deviation {:e})",
            a.asymmetry()
        ));
    }

    let mut w = a.as_slice().to_vec();
    // Mirror the upper triangle so tiny asymmetries cannot leak into the result.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (w[i * n + j] + w[j * n + i]);
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    // Row i of `vt` is eigenvector i.
    let mut vt = Matrix::identity(n).into_vec();

    let target = tol * scale;
    let mut converged = scale == 0.0;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_mass(&w, n) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut w, &mut vt, n, p, q);
            }
        }
    }
    if !converged {
        let off = off_diagonal_mass(&w, n);
        if off > target {
            return Err(Error::Convergence { sweeps: MAX_SWEEPS, off_diagonal: off });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[j * n + j].total_cmp(&w[i * n + i]).then(i.cmp(&j)));

    let eigenvalues = order.iter().map(|&i| w[i * n + i]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let v = &mut vt[src * n..(src + 1) * n];
        normalize_sign(v);
        eigenvectors.set_col(col, v);
    }
    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

fn off_diagonal_mass(w: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += w[i * n + j] * w[i * n + j];
            }
        }
    }
    s.sqrt()
}

fn rotate(w: &mut [f64], vt: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = w[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = w[p * n + p];
    let aqq = w[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = w[p * n + k];
        let akq = w[q * n + k];
        let np = c * akp - s * akq;
        let nq = s * akp + c * akq;
        w[p * n + k] = np;
        w[k * n + p] = np;
        w[q * n + k] = nq;
        w[k * n + q] = nq;
    }
    w[p * n + p] = app - t * apq;
    w[q * n + q] = aqq + t * apq;
    w[p * n + q] = 0.0;
    w[q * n + p] = 0.0;

    let (head, tail) = vt.split_at_mut(q * n);
    let vp = &mut head[p * n..(p + 1) * n];
    let vq = &mut tail[..n];
    for (a, b) in vp.iter_mut().zip(vq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

pub(crate) fn normalize_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::new(seed, 0);
        let g = Matrix::from_fn(n, n, |_, _| rng.normal());
        g.add(&g.transpose()).unwrap().scale(0.5)
    }

    fn check_pairs(a: &Matrix, e: &EigenDecomposition, tol: f64) {
        let scale = a.frobenius_norm();
        for (i, &lambda) in e.eigenvalues.iter().enumerate() {
            let v = e.eigenvectors.col(i);
            let av = a.mul_vec(&v).unwrap();
            let r: f64 = av.iter().zip(&v).map(|(x, y)| (x - lambda * y).powi(2)).sum::<f64>().sqrt();
            assert!(r <= tol * scale, "residual {r} for pair {i}");
        }
        let vtv = e.eigenvectors.gram();
        assert!(vtv.sub(&Matrix::identity(a.rows())).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn identity_two_by_two() {
        let e = sym_eig(&Matrix::identity(2), DEFAULT_TOL).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0]);
    }

    #[test]
    fn two_by_two_hand_case() {
        // characteristic polynomial (2-λ)² - 1 = 0 → λ ∈ {3, 1}
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let e = sym_eig(&a, DEFAULT_TOL).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
        check_pairs(&a, &e, 1e-12);
    }

    #[test]
    fn diagonal_is_sorted_with_axis_vectors() {
        let a = Matrix::from_diag(&[5.0, -1.0, 0.0]);
        let e = sym_eig(&a, DEFAULT_TOL).unwrap();
        assert_eq!(e.eigenvalues, vec![5.0, 0.0, -1.0]);
        assert_eq!(e.eigenvectors.col(0), vec![1.0, 0.0, 0.0]);
        assert_eq!(e.eigenvectors.col(1), vec![0.0, 0.0, 1.0]);
        assert_eq!(e.eigenvectors.col(2), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(sym_eig(&Matrix::zeros(2, 3), DEFAULT_TOL), Err(Error::Dimension(_))));
        let skew = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&skew, DEFAULT_TOL), Err(Error::Validation(_))));
        let nan = Matrix::from_rows(&[[f64::NAN, 0.0], [0.0, 1.0]]).unwrap();
        assert!(sym_eig(&nan, DEFAULT_TOL).is_err());
    }

    #[test]
    fn random_matrices_satisfy_invariants() {
        for (n, seed) in [(1, 1), (3, 2), (10, 3), (33, 4), (64, 5)] {
            let a = random_symmetric(n, seed);
            let e = sym_eig(&a, DEFAULT_TOL).unwrap();
            check_pairs(&a, &e, 1e-9);
            let trace_err = (a.trace() - e.eigenvalues.iter().sum::<f64>()).abs();
            assert!(trace_err <= 1e-9 * a.frobenius_norm());
            assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn zero_matrix() {
        let e = sym_eig(&Matrix::zeros(4, 4), DEFAULT_TOL).unwrap();
        assert_eq!(e.eigenvalues, vec![0.0; 4]);
    }
}
