use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{init_matrix, InitScheme, InitSpec, PropertyReport, Tolerance};
use crate::error::{dim_err, invalid, Result};
use crate::numerics::{dot, norm, svd, sym_eig, Matrix, RngStream, DEFAULT_TOL};

/// Constant in the advisory sample-complexity guard `d1 ≥ C·ε⁻²·ln(N/δ)`.
pub const GUARD_CONSTANT: f64 = 8.0;

const FULL_RANK_TOL: f64 = 1e-10;
const PRODUCT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub scheme: InitScheme,
    pub trials: usize,
    /// Overrides the per-check default when set.
    pub tolerance: Option<Tolerance>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { scheme: InitScheme::default(), trials: 2000, tolerance: None }
    }
}

impl CheckConfig {
    pub fn with_trials(trials: usize) -> Self {
        Self { trials, ..Self::default() }
    }

    fn tolerance_or(&self, default: Tolerance) -> Tolerance {
        self.tolerance.unwrap_or(default)
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return invalid("trials must be positive");
        }
        Ok(())
    }
}

/// Base stream for a check: one draw from `rng`, then one child per trial.
fn trial_base(rng: &mut RngStream) -> RngStream {
    let key = rng.next_u64();
    rng.derive(key)
}

/// Sample mean and standard error of the mean.
fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn extremes(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn monte_carlo_report(property: &str, theoretical: f64, values: &[f64], tolerance: Tolerance) -> PropertyReport {
    let (mean, se) = mean_se(values);
    let (lo, hi) = extremes(values);
    let mut r = PropertyReport::new(property, theoretical, mean, values.len(), tolerance)
        .judge(se)
        .detail("standard_error", se)
        .detail("trial_min", lo)
        .detail("trial_max", hi);
    if theoretical != 0.0 {
        r = r.detail("relative_error", (mean - theoretical).abs() / theoretical.abs());
    }
    r
}

/// `E[tr(MᵀΣM)] = d1·Var·tr(Σ)` for M of shape d0 × d1.
pub fn verify_variance_scaling(
    d0: usize,
    d1: usize,
    sigma: &Matrix,
    config: &CheckConfig,
    rng: &mut RngStream,
) -> Result<PropertyReport> {
    config.validate()?;
    if sigma.shape() != (d0, d0) {
        return dim_err(format!("covariance must be {d0}x{d0}, got {:?}", sigma.shape()));
    }
    let scale = sigma.max_abs();
    if sigma.asymmetry() > 1e-10 * scale {
        return invalid("covariance is not symmetric");
    }
    if scale > 0.0 {
        let eig = sym_eig(sigma, DEFAULT_TOL)?;
        let min = eig.eigenvalues.last().copied().unwrap_or(0.0);
        if min < -1e-10 * eig.eigenvalues[0].abs().max(scale) {
            return invalid(format!("covariance is not positive semidefinite (eigenvalue {min:.3e})"));
        }
    }
    let spec = InitSpec::new(config.scheme, d0, d1);
    let base = trial_base(rng);
    let mut values = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let m = init_matrix(&spec, &mut base.derive(t as u64))?;
        let sm = sigma.matmul(&m)?;
        values.push(dot(sm.as_slice(), m.as_slice()));
    }
    let theoretical = d1 as f64 * spec.entry_variance() * sigma.trace();
    Ok(monte_carlo_report(
        "variance_scaling",
        theoretical,
        &values,
        config.tolerance_or(Tolerance::StandardErrors(5.0)),
    ))
}

fn check_pair(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return dim_err(format!("vectors differ in length: {} vs {}", u.len(), v.len()));
    }
    if u.is_empty() || norm(u) == 0.0 || norm(v) == 0.0 {
        return invalid("vectors must be nonzero");
    }
    Ok(())
}

/// `E[⟨Mᵀu, Mᵀv⟩] = d1·Var·⟨u, v⟩`.
pub fn verify_inner_product(
    u: &[f64],
    v: &[f64],
    d1: usize,
    config: &CheckConfig,
    rng: &mut RngStream,
) -> Result<PropertyReport> {
    config.validate()?;
    check_pair(u, v)?;
    let spec = InitSpec::new(config.scheme, u.len(), d1);
    let base = trial_base(rng);
    let mut values = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let m = init_matrix(&spec, &mut base.derive(t as u64))?;
        values.push(dot(&m.tr_mul_vec(u)?, &m.tr_mul_vec(v)?));
    }
    let theoretical = d1 as f64 * spec.entry_variance() * dot(u, v);
    Ok(monte_carlo_report(
        "inner_product",
        theoretical,
        &values,
        config.tolerance_or(Tolerance::StandardErrors(5.0)),
    ))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Mean of `cos∠(Mᵀu, Mᵀv)` against `cos∠(u, v)`; default tolerance `0.8/√d1`.
pub fn verify_cosine(
    u: &[f64],
    v: &[f64],
    d1: usize,
    config: &CheckConfig,
    rng: &mut RngStream,
) -> Result<PropertyReport> {
    config.validate()?;
    check_pair(u, v)?;
    let spec = InitSpec::new(config.scheme, u.len(), d1);
    let base = trial_base(rng);
    let mut values = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let m = init_matrix(&spec, &mut base.derive(t as u64))?;
        values.push(cosine(&m.tr_mul_vec(u)?, &m.tr_mul_vec(v)?));
    }
    Ok(monte_carlo_report(
        "cosine",
        cosine(u, v),
        &values,
        config.tolerance_or(Tolerance::Absolute(0.8 / (d1 as f64).sqrt())),
    ))
}

/// Largest squared-distance distortion `|‖M'ᵀ(xi−xj)‖²/‖xi−xj‖² − 1|` over all
/// pairs, for one draw of the normalized map `M' = M/√(d1·Var)`.
pub fn verify_pairwise_distances(
    x: &Matrix,
    d1: usize,
    eps: f64,
    delta: f64,
    config: &CheckConfig,
    rng: &mut RngStream,
) -> Result<PropertyReport> {
    if x.rows() < 2 {
        return dim_err("pairwise distances need at least two points");
    }
    if !(eps > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return invalid("need eps > 0 and 0 < delta < 1");
    }
    let spec = InitSpec::new(config.scheme, x.cols(), d1);
    let mut trial = trial_base(rng);
    let m = init_matrix(&spec, &mut trial)?.scale(1.0 / (d1 as f64 * spec.entry_variance()).sqrt());
    let y = x.matmul(&m)?;

    let (mut worst, mut skipped, mut pairs) = (0.0_f64, 0usize, 0usize);
    for i in 0..x.rows() {
        for j in i + 1..x.rows() {
            let before: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            if before == 0.0 {
                skipped += 1;
                continue;
            }
            let after: f64 = y.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            worst = worst.max((after / before - 1.0).abs());
            pairs += 1;
        }
    }
    let guard = GUARD_CONSTANT * (x.rows() as f64 / delta).ln() / (eps * eps);
    let mut r = PropertyReport::new("pairwise_distances", eps, worst, 1, Tolerance::UpperBound)
        .judge(0.0)
        .detail("pairs", pairs as f64)
        .detail("pairs_skipped", skipped as f64)
        .detail("guard_required_d1", guard);
    if (d1 as f64) < guard {
        r.flags.push("sample_complexity_guard_not_met".into());
    }
    if pairs == 0 {
        r.flags.push("no_nondegenerate_pairs".into());
    }
    Ok(r)
}

/// Numerical rank `#{σi > 1e-10·σ1}` of every draw equals `min(d0, d1)`.
pub fn verify_full_rank(d0: usize, d1: usize, config: &CheckConfig, rng: &mut RngStream) -> Result<PropertyReport> {
    config.validate()?;
    let spec = InitSpec::new(config.scheme, d0, d1);
    let base = trial_base(rng);
    let target = d0.min(d1);
    let (mut min_rank, mut max_rank, mut failures) = (usize::MAX, 0, 0);
    let mut worst_ratio = f64::INFINITY;
    for t in 0..config.trials {
        let m = init_matrix(&spec, &mut base.derive(t as u64))?;
        let s = svd(&m, DEFAULT_TOL)?;
        let rank = s.rank(FULL_RANK_TOL);
        if rank != target {
            failures += 1;
        }
        min_rank = min_rank.min(rank);
        max_rank = max_rank.max(rank);
        if s.singular_values[0] > 0.0 {
            worst_ratio = worst_ratio.min(s.singular_values[target - 1] / s.singular_values[0]);
        }
    }
    let mut r = PropertyReport::new("full_rank", target as f64, min_rank as f64, config.trials, Tolerance::Exact)
        .detail("max_rank", max_rank as f64)
        .detail("failures", failures as f64)
        .detail("min_sigma_ratio", worst_ratio);
    r.pass = failures == 0;
    Ok(r)
}

/// Numerical rank of `w2·w1`: singular values at or above `1e-8·σ1`; 0 for a zero product.
pub fn product_rank(w2: &Matrix, w1: &Matrix) -> Result<usize> {
    let p = w2.matmul(w1)?;
    Ok(svd(&p, DEFAULT_TOL)?.rank(PRODUCT_RANK_TOL))
}

/// `rank(W2·W1) ≤ r` for random W2 (d0 × r) and W1 (r × d1).
pub fn verify_rank_product(
    d0: usize,
    d1: usize,
    r: usize,
    config: &CheckConfig,
    rng: &mut RngStream,
) -> Result<PropertyReport> {
    config.validate()?;
    if r == 0 || r >= d0.min(d1) {
        return invalid(format!("rank r = {r} must satisfy 1 <= r < min(d0, d1) = {}", d0.min(d1)));
    }
    let base = trial_base(rng);
    let (mut max_rank, mut worst_tail) = (0usize, 0.0_f64);
    for t in 0..config.trials {
        let mut trial = base.derive(t as u64);
        let w2 = init_matrix(&InitSpec::new(config.scheme, d0, r), &mut trial)?;
        let w1 = init_matrix(&InitSpec::new(config.scheme, r, d1), &mut trial)?;
        let s = svd(&w2.matmul(&w1)?, DEFAULT_TOL)?;
        max_rank = max_rank.max(s.rank(PRODUCT_RANK_TOL));
        if s.singular_values[0] > 0.0 {
            worst_tail = worst_tail.max(s.singular_values[r] / s.singular_values[0]);
        }
    }
    Ok(PropertyReport::new("rank_product", r as f64, max_rank as f64, config.trials, Tolerance::UpperBound)
        .judge(0.0)
        .detail("max_tail_ratio", worst_tail))
}
