use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::numerics::{svd, Matrix, SvdResult, DEFAULT_TOL};

/// Low-rank correction `W2·W1` that brings an anchor `B` close to a target `A*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Approximation {
    pub rank: usize,
    /// `(W2, W1)`; absent when `rank = 0`.
    pub factors: Option<(Matrix, Matrix)>,
    /// `‖A* − (B + W2·W1)‖_F` measured directly.
    pub achieved_error: f64,
    /// `√(Σ_{i>r} σi²)` of `E = A* − B`, the optimal error at this rank.
    pub tail: f64,
    /// Set when rounding leaves `achieved_error` above the requested ε.
    pub at_floor: bool,
}

fn residual_svd(a_star: &Matrix, b: &Matrix) -> Result<(Matrix, SvdResult)> {
    if a_star.shape() != b.shape() {
        return dim_err(format!("target {:?} and anchor {:?} differ in shape", a_star.shape(), b.shape()));
    }
    let e = a_star.sub(b)?;
    let s = svd(&e, DEFAULT_TOL)?;
    Ok((e, s))
}

/// `tails[r] = √(Σ_{i≥r} σi²)` (0-based), accumulated from the smallest value up.
fn tails(sigma: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; sigma.len() + 1];
    let mut acc = 0.0;
    for i in (0..sigma.len()).rev() {
        acc += sigma[i] * sigma[i];
        out[i] = acc.sqrt();
    }
    out
}

fn build(a_star: &Matrix, b: &Matrix, s: &SvdResult, r: usize, tail: f64, eps: f64) -> Result<Approximation> {
    if r == 0 {
        let err = a_star.sub(b)?.frobenius_norm();
        return Ok(Approximation { rank: 0, factors: None, achieved_error: err, tail, at_floor: err > eps });
    }
    let (d0, d1) = a_star.shape();
    let roots: Vec<f64> = s.singular_values[..r].iter().map(|x| x.sqrt()).collect();
    let w2 = Matrix::from_fn(d0, r, |i, j| s.u[(i, j)] * roots[j]);
    let w1 = Matrix::from_fn(r, d1, |i, j| roots[i] * s.v[(j, i)]);
    let err = a_star.sub(&b.add(&w2.matmul(&w1)?)?)?.frobenius_norm();
    Ok(Approximation { rank: r, factors: Some((w2, w1)), achieved_error: err, tail, at_floor: err > eps })
}

/// Smallest rank whose truncated SVD of `A* − B` is within `eps` in Frobenius norm.
pub fn approximate_target(a_star: &Matrix, b: &Matrix, eps: f64) -> Result<Approximation> {
    if !(eps > 0.0) {
        return invalid(format!("eps must be positive, got {eps}"));
    }
    let (e, s) = residual_svd(a_star, b)?;
    let mut t = tails(&s.singular_values);
    // the rank-0 tail is ‖E‖_F itself; use the direct value rather than the SVD sum
    t[0] = e.frobenius_norm();
    let r = (0..t.len()).find(|&r| t[r] <= eps).expect("the empty tail is zero");
    build(a_star, b, &s, r, t[r], eps)
}

/// Best rank-`r` correction (Eckart-Young).
pub fn approximate_with_rank(a_star: &Matrix, b: &Matrix, r: usize) -> Result<Approximation> {
    let (_, s) = residual_svd(a_star, b)?;
    if r > s.singular_values.len() {
        return invalid(format!("rank {r} exceeds min(d0, d1) = {}", s.singular_values.len()));
    }
    let t = tails(&s.singular_values);
    build(a_star, b, &s, r, t[r], f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sym_eig, RngStream};

    fn random(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    #[test]
    fn equal_target_needs_no_correction() {
        let mut rng = RngStream::new(0, 0);
        let a = random(5, 4, &mut rng);
        let ap = approximate_target(&a, &a, 1e-9).unwrap();
        assert_eq!(ap.rank, 0);
        assert!(ap.factors.is_none());
        assert_eq!(ap.achieved_error, 0.0);
    }

    #[test]
    fn large_eps_admits_rank_zero() {
        let mut rng = RngStream::new(1, 0);
        let (a, b) = (random(5, 4, &mut rng), random(5, 4, &mut rng));
        let eps = a.sub(&b).unwrap().frobenius_norm();
        assert_eq!(approximate_target(&a, &b, eps).unwrap().rank, 0);
        assert!(approximate_target(&a, &b, 0.0).is_err());
    }

    #[test]
    fn tail_matches_independent_singular_values() {
        let mut rng = RngStream::new(2, 0);
        let (a, b) = (random(8, 6, &mut rng), random(8, 6, &mut rng));
        let e = a.sub(&b).unwrap();
        // oracle singular values from the eigenvalues of EᵀE
        let sig: Vec<f64> = sym_eig(&e.gram(), 1e-12).unwrap().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
        let eps = 0.5 * sig[1];
        let ap = approximate_target(&a, &b, eps).unwrap();
        let oracle_tail = sig[ap.rank..].iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!(oracle_tail <= eps);
        assert!(sig[ap.rank - 1..].iter().map(|s| s * s).sum::<f64>().sqrt() > eps);
        assert!((ap.achieved_error - oracle_tail).abs() < 1e-9, "{} vs {oracle_tail}", ap.achieved_error);
        assert!(!ap.at_floor);
    }

    #[test]
    fn tiny_eps_gives_full_rank_at_floor() {
        let mut rng = RngStream::new(3, 0);
        let (a, b) = (random(6, 4, &mut rng), random(6, 4, &mut rng));
        let ap = approximate_target(&a, &b, 1e-300).unwrap();
        assert_eq!(ap.rank, 4);
        assert!(ap.achieved_error < 1e-12);
        assert!(ap.at_floor);
    }

    #[test]
    fn tail_is_monotone_and_optimal() {
        let mut rng = RngStream::new(4, 0);
        let (a, b) = (random(7, 5, &mut rng), random(7, 5, &mut rng));
        let errs: Vec<f64> = (0..=5).map(|r| approximate_with_rank(&a, &b, r).unwrap().achieved_error).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{errs:?}");
        let best = approximate_with_rank(&a, &b, 2).unwrap().achieved_error;
        for _ in 0..100 {
            let w2 = random(7, 2, &mut rng);
            let w1 = random(2, 5, &mut rng);
            let err = a.sub(&b.add(&w2.matmul(&w1).unwrap()).unwrap()).unwrap().frobenius_norm();
            assert!(best <= err);
        }
    }
}
