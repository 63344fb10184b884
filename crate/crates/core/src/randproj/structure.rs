use serde::{Deserialize, Serialize};

use super::checks::CheckConfig;
use super::{init_matrix, InitSpec, PropertyReport, Tolerance};
use crate::error::{dim_err, invalid, Result};
use crate::numerics::{orthonormalize_columns, svd, sym_eig, Matrix, RngStream, DEFAULT_TOL};

/// Restricted isometry supports are enumerated exhaustively, so sizes are capped.
pub const MAX_RIP_DIM: usize = 16;
pub const MAX_RIP_SPARSITY: usize = 2;

const RIP_VECTORS_PER_SUPPORT: usize = 10;

/// Small-scale structural checks on one draw of the normalized map `M/√(d1·Var)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "property", rename_all = "snake_case")]
pub enum StructureProperty {
    /// κ(A·M') ≤ κ(A)·√((1+ε)/(1−ε)) for A of shape n × d0.
    ConditionNumber { n: usize, d0: usize, d1: usize, eps: f64 },
    /// Every `sparsity`-sparse vector keeps its squared norm within ε.
    RestrictedIsometry { d0: usize, d1: usize, sparsity: usize, eps: f64 },
    /// A random `dim`-dimensional subspace keeps squared norms within ε.
    SubspaceEmbedding { d0: usize, d1: usize, dim: usize, eps: f64 },
    /// Two clusters with `(1−ε)Δ > (1+ε)D` stay separable after projection.
    ClusterLabels { d0: usize, d1: usize, per_cluster: usize, radius: f64, separation: f64, eps: f64 },
    /// Euclidean k-NN lists of well-separated points are unchanged.
    NearestNeighbors { n: usize, d0: usize, d1: usize, k: usize },
    /// Volume of a d-simplex changes by a factor in `[(1−ε)^{d/2}, (1+ε)^{d/2}]`.
    SimplexVolume { d: usize, d0: usize, d1: usize, eps: f64 },
}

impl StructureProperty {
    pub const IDS: [&'static str; 6] = [
        "condition_number",
        "restricted_isometry",
        "subspace_embedding",
        "cluster_labels",
        "nearest_neighbors",
        "simplex_volume",
    ];

    pub fn id(&self) -> &'static str {
        match self {
            StructureProperty::ConditionNumber { .. } => "condition_number",
            StructureProperty::RestrictedIsometry { .. } => "restricted_isometry",
            StructureProperty::SubspaceEmbedding { .. } => "subspace_embedding",
            StructureProperty::ClusterLabels { .. } => "cluster_labels",
            StructureProperty::NearestNeighbors { .. } => "nearest_neighbors",
            StructureProperty::SimplexVolume { .. } => "simplex_volume",
        }
    }

    /// Desk-scale default parameters for a property id.
    pub fn defaults(id: &str) -> Result<Self> {
        Ok(match id {
            "condition_number" => StructureProperty::ConditionNumber { n: 8, d0: 64, d1: 1024, eps: 0.5 },
            "restricted_isometry" => {
                StructureProperty::RestrictedIsometry { d0: 16, d1: 1024, sparsity: 2, eps: 0.3 }
            }
            "subspace_embedding" => StructureProperty::SubspaceEmbedding { d0: 128, d1: 1024, dim: 8, eps: 0.3 },
            "cluster_labels" => StructureProperty::ClusterLabels {
                d0: 64,
                d1: 512,
                per_cluster: 20,
                radius: 1.0,
                separation: 6.0,
                eps: 0.2,
            },
            "nearest_neighbors" => StructureProperty::NearestNeighbors { n: 30, d0: 64, d1: 1024, k: 3 },
            "simplex_volume" => StructureProperty::SimplexVolume { d: 4, d0: 64, d1: 1024, eps: 0.3 },
            _ => return invalid(format!("unknown structure property '{id}'")),
        })
    }
}

fn normalized_map(d0: usize, d1: usize, config: &CheckConfig, rng: &mut RngStream) -> Result<Matrix> {
    let spec = InitSpec::new(config.scheme, d0, d1);
    Ok(init_matrix(&spec, rng)?.scale(1.0 / (d1 as f64 * spec.entry_variance()).sqrt()))
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return invalid(format!("eps must lie in (0, 1), got {eps}"));
    }
    Ok(())
}

fn gaussian(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Extremes of `‖M'ᵀx‖²` over unit x in the span of the orthonormal columns of `q`.
fn squared_norm_range(q: &Matrix, mp: &Matrix) -> Result<(f64, f64)> {
    let s = svd(&q.tr_matmul(mp)?, DEFAULT_TOL)?;
    let hi = s.singular_values[0].powi(2);
    let lo = s.singular_values.last().copied().unwrap_or(0.0).powi(2);
    Ok((lo, hi))
}

fn distortion((lo, hi): (f64, f64)) -> f64 {
    (hi - 1.0).max(1.0 - lo)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Largest `|‖yi−yj‖²/‖xi−xj‖² − 1|` over distinct pairs.
fn pairwise_distortion(x: &Matrix, y: &Matrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..x.rows() {
        for j in i + 1..x.rows() {
            let before = sq_dist(x.row(i), x.row(j));
            if before > 0.0 {
                worst = worst.max((sq_dist(y.row(i), y.row(j)) / before - 1.0).abs());
            }
        }
    }
    worst
}

pub fn verify_structure_preservation(
    property: &StructureProperty,
    config: &CheckConfig,
    rng: &mut RngStream,
) -> Result<PropertyReport> {
    let mut draw = rng.derive(crate::numerics::stream_key(property.id()));
    match *property {
        StructureProperty::ConditionNumber { n, d0, d1, eps } => condition_number(n, d0, d1, eps, config, &mut draw),
        StructureProperty::RestrictedIsometry { d0, d1, sparsity, eps } => {
            restricted_isometry(d0, d1, sparsity, eps, config, &mut draw)
        }
        StructureProperty::SubspaceEmbedding { d0, d1, dim, eps } => {
            check_eps(eps)?;
            if dim == 0 || dim > d0 || dim > d1 {
                return invalid(format!("subspace dimension {dim} must be in 1..=min(d0, d1)"));
            }
            let q = orthonormalize_columns(&gaussian(d0, dim, &mut draw))?;
            let mp = normalized_map(d0, d1, config, &mut draw)?;
            let range = squared_norm_range(&q, &mp)?;
            Ok(PropertyReport::new("subspace_embedding", eps, distortion(range), 1, Tolerance::UpperBound)
                .judge(0.0)
                .detail("min_squared_ratio", range.0)
                .detail("max_squared_ratio", range.1))
        }
        StructureProperty::ClusterLabels { d0, d1, per_cluster, radius, separation, eps } => {
            cluster_labels(d0, d1, per_cluster, radius, separation, eps, config, &mut draw)
        }
        StructureProperty::NearestNeighbors { n, d0, d1, k } => nearest_neighbors(n, d0, d1, k, config, &mut draw),
        StructureProperty::SimplexVolume { d, d0, d1, eps } => simplex_volume(d, d0, d1, eps, config, &mut draw),
    }
}

fn condition(m: &Matrix) -> Result<f64> {
    let s = svd(m, DEFAULT_TOL)?;
    Ok(s.singular_values[0] / s.singular_values.last().copied().unwrap_or(0.0))
}

fn condition_number(
    n: usize,
    d0: usize,
    d1: usize,
    eps: f64,
    config: &CheckConfig,
    rng: &mut RngStream,
) -> Result<PropertyReport> {
    check_eps(eps)?;
    if n == 0 || n > d0 || n > d1 {
        return invalid(format!("condition check needs 1 <= n <= min(d0, d1), got n = {n}"));
    }
    // rows scaled over two decades so κ(A) is well above 1
    let mut a = gaussian(n, d0, rng);
    for i in 0..n {
        let s = 10f64.powf(-2.0 * i as f64 / (n.max(2) - 1) as f64);
        a.row_mut(i).iter_mut().for_each(|x| *x *= s);
    }
    let mp = normalized_map(d0, d1, config, rng)?;
    let before = condition(&a)?;
    let after = condition(&a.matmul(&mp)?)?;
    let measured = distortion(squared_norm_range(&orthonormalize_columns(&a.transpose())?, &mp)?);
    let bound = before * ((1.0 + eps) / (1.0 - eps)).sqrt();
    let mut r = PropertyReport::new("condition_number", bound, after, 1, Tolerance::UpperBound)
        .judge(0.0)
        .detail("kappa_before", before)
        .detail("measured_distortion", measured);
    if measured > eps {
        r.flags.push("embedding_distortion_exceeds_eps".into());
    }
    Ok(r)
}

fn supports(d0: usize, k: usize) -> Vec<Vec<usize>> {
    match k {
        1 => (0..d0).map(|i| vec![i]).collect(),
        _ => (0..d0).flat_map(|i| (i + 1..d0).map(move |j| vec![i, j])).collect(),
    }
}

fn restricted_isometry(
    d0: usize,
    d1: usize,
    k: usize,
    eps: f64,
    config: &CheckConfig,
    rng: &mut RngStream,
) -> Result<PropertyReport> {
    check_eps(eps)?;
    if d0 > MAX_RIP_DIM || k > MAX_RIP_SPARSITY {
        return invalid(format!(
            "restricted isometry enumeration is limited to d0 <= {MAX_RIP_DIM} and sparsity <= {MAX_RIP_SPARSITY}, got d0 = {d0}, sparsity = {k}"
        ));
    }
    if k == 0 || k > d0 {
        return invalid(format!("sparsity must be in 1..=d0, got {k}"));
    }
    let mp = normalized_map(d0, d1, config, rng)?;
    let (mut exact, mut sampled) = (0.0_f64, 0.0_f64);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let all = supports(d0, k);
    for s in &all {
        let rows = mp.select_rows(s)?;
        let eig = sym_eig(&rows.outer_gram(), DEFAULT_TOL)?;
        let (l_max, l_min) = (eig.eigenvalues[0], *eig.eigenvalues.last().unwrap());
        lo = lo.min(l_min);
        hi = hi.max(l_max);
        exact = exact.max(distortion((l_min, l_max)));
        for _ in 0..RIP_VECTORS_PER_SUPPORT {
            let mut x: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
            let nx = crate::numerics::norm(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            let y = rows.tr_mul_vec(&x)?;
            sampled = sampled.max((crate::numerics::dot(&y, &y) - 1.0).abs());
        }
    }
    Ok(PropertyReport::new("restricted_isometry", eps, exact, 1, Tolerance::UpperBound)
        .judge(0.0)
        .detail("supports", all.len() as f64)
        .detail("sampled_distortion", sampled)
        .detail("min_eigenvalue", lo)
        .detail("max_eigenvalue", hi))
}

#[allow(clippy::too_many_arguments)]
fn cluster_labels(
    d0: usize,
    d1: usize,
    per_cluster: usize,
    radius: f64,
    separation: f64,
    eps: f64,
    config: &CheckConfig,
    rng: &mut RngStream,
) -> Result<PropertyReport> {
    check_eps(eps)?;
    if per_cluster < 2 || !(radius > 0.0) || !(separation > 0.0) {
        return invalid("cluster check needs per_cluster >= 2 and positive radius and separation");
    }
    let mut dir: Vec<f64> = (0..d0).map(|_| rng.normal()).collect();
    let nd = crate::numerics::norm(&dir);
    dir.iter_mut().for_each(|v| *v /= nd);
    let n = 2 * per_cluster;
    let mut x = Matrix::zeros(n, d0);
    for i in 0..n {
        let mut g: Vec<f64> = (0..d0).map(|_| rng.normal()).collect();
        let ng = crate::numerics::norm(&g);
        let r = radius * rng.next_f64();
        g.iter_mut().for_each(|v| *v *= r / ng);
        let shift = if i < per_cluster { 0.0 } else { separation };
        x.row_mut(i).iter_mut().zip(g.iter().zip(&dir)).for_each(|(o, (gv, dv))| *o = gv + shift * dv);
    }
    let label = |i: usize| i < per_cluster;
    let spread = |m: &Matrix| {
        let (mut intra, mut inter) = (0.0_f64, f64::INFINITY);
        for i in 0..n {
            for j in i + 1..n {
                let d = sq_dist(m.row(i), m.row(j));
                if label(i) == label(j) {
                    intra = intra.max(d);
                } else {
                    inter = inter.min(d);
                }
            }
        }
        (intra, inter)
    };
    let (big_d, big_delta) = spread(&x);
    if (1.0 - eps) * big_delta <= (1.0 + eps) * big_d {
        return invalid(format!(
            "cluster precondition fails: (1-eps)*{big_delta:.4} <= (1+eps)*{big_d:.4}; increase separation"
        ));
    }
    let mp = normalized_map(d0, d1, config, rng)?;
    let y = x.matmul(&mp)?;
    let (intra, inter) = spread(&y);
    let measured = pairwise_distortion(&x, &y);
    let mut r = PropertyReport::new("cluster_labels", 1.0, intra / inter, 1, Tolerance::UpperBound)
        .detail("max_intra_squared", intra)
        .detail("min_inter_squared", inter)
        .detail("measured_distortion", measured);
    r.pass = intra < inter;
    if measured > eps {
        r.flags.push("embedding_distortion_exceeds_eps".into());
    }
    Ok(r)
}

/// Indices of the k nearest other rows (squared Euclidean), ties to the lower index.
fn knn_lists(m: &Matrix, k: usize) -> Vec<Vec<usize>> {
    (0..m.rows())
        .map(|i| {
            let mut d: Vec<(f64, usize)> =
                (0..m.rows()).filter(|&j| j != i).map(|j| (sq_dist(m.row(i), m.row(j)), j)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d[..k].iter().map(|p| p.1).collect()
        })
        .collect()
}

fn nearest_neighbors(
    n: usize,
    d0: usize,
    d1: usize,
    k: usize,
    config: &CheckConfig,
    rng: &mut RngStream,
) -> Result<PropertyReport> {
    if k == 0 || n <= k + 1 {
        return invalid(format!("nearest-neighbor check needs n > k + 1, got n = {n}, k = {k}"));
    }
    if d0 == 0 {
        return dim_err("d0 must be positive");
    }
    // geometric spacing along a random line, with small relative jitter
    let dir: Vec<f64> = (0..d0).map(|_| rng.normal() / (d0 as f64).sqrt()).collect();
    let mut x = Matrix::zeros(n, d0);
    for i in 0..n {
        let scale = 1.5f64.powi(i as i32);
        for c in 0..d0 {
            x[(i, c)] = scale * (dir[c] + 0.05 * rng.normal() / (d0 as f64).sqrt());
        }
    }
    let mp = normalized_map(d0, d1, config, rng)?;
    let y = x.matmul(&mp)?;
    let before = knn_lists(&x, k);
    let after = knn_lists(&y, k);
    let changed = before.iter().zip(&after).filter(|(a, b)| a != b).count();

    let measured = pairwise_distortion(&x, &y);
    let mut margin_holds = true;
    let mut min_margin = f64::INFINITY;
    for i in 0..n {
        let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| sq_dist(x.row(i), x.row(j))).collect();
        d.sort_by(f64::total_cmp);
        min_margin = min_margin.min(d[k] / d[k - 1]);
        margin_holds &= (1.0 - measured) * d[k] > (1.0 + measured) * d[k - 1];
    }
    let mut r = PropertyReport::new("nearest_neighbors", 0.0, changed as f64, 1, Tolerance::Exact)
        .judge(0.0)
        .detail("measured_distortion", measured)
        .detail("min_margin_ratio", min_margin)
        .detail("margin_condition_holds", f64::from(u8::from(margin_holds)));
    if margin_holds && changed > 0 {
        r.flags.push("graph_changed_despite_margin".into());
    }
    Ok(r)
}

/// `log det(G)` for a symmetric positive definite Gram matrix.
fn log_det(g: &Matrix) -> Result<f64> {
    let eig = sym_eig(g, DEFAULT_TOL)?;
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return invalid("simplex is degenerate");
    }
    Ok(eig.eigenvalues.iter().map(|l| l.ln()).sum())
}

fn simplex_volume(
    d: usize,
    d0: usize,
    d1: usize,
    eps: f64,
    config: &CheckConfig,
    rng: &mut RngStream,
) -> Result<PropertyReport> {
    check_eps(eps)?;
    if d == 0 || d > d0 || d > d1 {
        return invalid(format!("simplex dimension {d} must be in 1..=min(d0, d1)"));
    }
    let vertices = gaussian(d + 1, d0, rng);
    let edges = Matrix::from_fn(d, d0, |i, c| vertices[(i + 1, c)] - vertices[(0, c)]);
    let mp = normalized_map(d0, d1, config, rng)?;
    let projected = edges.matmul(&mp)?;
    let ratio = (0.5 * (log_det(&projected.outer_gram())? - log_det(&edges.outer_gram())?)).exp();
    let half = d as f64 / 2.0;
    let (lower, upper) = ((1.0 - eps).powf(half), (1.0 + eps).powf(half));
    let measured = distortion(squared_norm_range(&orthonormalize_columns(&edges.transpose())?, &mp)?);
    let mut r = PropertyReport::new("simplex_volume", upper, ratio, 1, Tolerance::UpperBound)
        .detail("lower_bound", lower)
        .detail("measured_distortion", measured);
    r.pass = ratio >= lower && ratio <= upper;
    if measured > eps {
        r.flags.push("embedding_distortion_exceeds_eps".into());
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: &StructureProperty, seed: u64) -> PropertyReport {
        verify_structure_preservation(p, &CheckConfig::default(), &mut RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn defaults_pass() {
        for id in StructureProperty::IDS {
            let p = StructureProperty::defaults(id).unwrap();
            assert_eq!(p.id(), id);
            let r = run(&p, 1);
            assert!(r.pass, "{id}: {r:?}");
            assert!(r.flags.is_empty(), "{id}: {:?}", r.flags);
        }
        assert!(StructureProperty::defaults("volume").is_err());
    }

    #[test]
    fn rip_enumeration_limits() {
        let p = StructureProperty::RestrictedIsometry { d0: 17, d1: 64, sparsity: 2, eps: 0.3 };
        let err = verify_structure_preservation(&p, &CheckConfig::default(), &mut RngStream::new(0, 0))
            .unwrap_err()
            .to_string();
        assert!(err.contains("16") && err.contains("2"), "{err}");
        let p = StructureProperty::RestrictedIsometry { d0: 8, d1: 64, sparsity: 3, eps: 0.3 };
        assert!(verify_structure_preservation(&p, &CheckConfig::default(), &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn rip_sampled_vectors_within_exact_extremes() {
        let p = StructureProperty::RestrictedIsometry { d0: 10, d1: 32, sparsity: 2, eps: 0.9 };
        let r = run(&p, 3);
        assert_eq!(r.details["supports"], 45.0);
        assert!(r.details["sampled_distortion"] <= r.empirical + 1e-12);
    }

    #[test]
    fn small_projection_distorts_more() {
        let wide = run(&StructureProperty::SubspaceEmbedding { d0: 64, d1: 2048, dim: 4, eps: 0.5 }, 2);
        let narrow = run(&StructureProperty::SubspaceEmbedding { d0: 64, d1: 16, dim: 4, eps: 0.5 }, 2);
        assert!(wide.empirical < narrow.empirical);
    }

    #[test]
    fn simplex_identity_volume() {
        // the Gram-determinant volume of the unit right simplex edges is 1
        let e = Matrix::identity(3);
        assert!(log_det(&e.outer_gram()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn brute_force_knn_oracle() {
        let m = Matrix::from_rows(&[[0.0], [1.0], [3.0], [7.0]]).unwrap();
        assert_eq!(knn_lists(&m, 2), vec![vec![1, 2], vec![0, 2], vec![1, 0], vec![2, 1]]);
    }

    #[test]
    fn cluster_precondition_enforced() {
        let p = StructureProperty::ClusterLabels { d0: 16, d1: 64, per_cluster: 5, radius: 1.0, separation: 1.0, eps: 0.2 };
        assert!(verify_structure_preservation(&p, &CheckConfig::default(), &mut RngStream::new(0, 0)).is_err());
    }
}
