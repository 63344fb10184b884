use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::tangent::{estimate_tangent_dim, local_tangent, tangent_drift, TangentBasis};
use super::{ensure_normalized, knn_graph, FeatureMatrix, NeighborGraph, DEFAULT_K};
use crate::error::{invalid, Result};
use crate::numerics::RngStream;

/// Buckets with fewer sampled pairs than this are not reported.
pub const MIN_BUCKET_PAIRS: usize = 30;

/// Fraction of local covariance energy used to pick d_s when it is not given.
const TANGENT_ENERGY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub k: usize,
    /// Tangent dimension; estimated at the first usable point when `None`.
    pub d_s: Option<usize>,
    pub max_hops: usize,
    /// Upper bound on pairs evaluated per hop.
    pub sample_pairs: usize,
    pub min_pairs: usize,
    /// BFS runs from every node when N is at most this, else from a random subset of this size.
    pub max_sources: usize,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            d_s: None,
            max_hops: 8,
            sample_pairs: 500,
            min_pairs: MIN_BUCKET_PAIRS,
            max_sources: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftBucket {
    pub hop: usize,
    pub mean: f64,
    pub std: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCurve {
    pub k: usize,
    pub tangent_dim: usize,
    pub buckets: Vec<DriftBucket>,
    /// Hops in `1..=max_hops` that had too few pairs to report.
    pub omitted_hops: Vec<usize>,
    /// Sampled nodes whose neighborhood had no variance; pairs touching them are dropped.
    pub degenerate_nodes: usize,
}

impl DriftCurve {
    pub fn bucket(&self, hop: usize) -> Option<&DriftBucket> {
        self.buckets.iter().find(|b| b.hop == hop)
    }

    /// Two-column `hop,mean_drift` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("hop,mean_drift\n");
        for b in &self.buckets {
            out.push_str(&format!("{},{}\n", b.hop, b.mean));
        }
        out
    }
}

/// Uniform fixed-size sample of a stream (Algorithm R).
struct Reservoir {
    seen: usize,
    items: Vec<(usize, usize)>,
}

impl Reservoir {
    fn offer(&mut self, item: (usize, usize), cap: usize, rng: &mut RngStream) {
        self.seen += 1;
        if self.items.len() < cap {
            self.items.push(item);
        } else {
            let j = rng.index(self.seen);
            if j < cap {
                self.items[j] = item;
            }
        }
    }
}

/// Mean tangent drift as a function of graph hop distance.
pub fn drift_curve(f: &FeatureMatrix, config: &DriftConfig, rng: &mut RngStream) -> Result<DriftCurve> {
    if config.max_hops == 0 || config.sample_pairs == 0 {
        return invalid("max_hops and sample_pairs must be positive");
    }
    let f = ensure_normalized(f)?;
    let graph = knn_graph(&f, config.k)?;
    let n = f.n();

    let d_s = match config.d_s {
        Some(d) => d,
        None => (0..n)
            .find_map(|i| estimate_tangent_dim(&f, &graph, i, TANGENT_ENERGY).ok())
            .unwrap_or(1),
    };
    if d_s == 0 || d_s > f.dim() {
        return invalid(format!("tangent dimension {d_s} must be in 1..={}", f.dim()));
    }

    let reservoirs = sample_pairs(&graph, config, rng);

    let mut cache: HashMap<usize, Option<TangentBasis>> = HashMap::new();
    let mut buckets = Vec::new();
    let mut omitted_hops = Vec::new();
    for (h, res) in reservoirs.iter().enumerate() {
        let hop = h + 1;
        let mut values = Vec::with_capacity(res.items.len());
        for &(i, j) in &res.items {
            let (Some(vi), Some(vj)) = (tangent(&mut cache, &f, &graph, i, d_s)?, tangent(&mut cache, &f, &graph, j, d_s)?) else {
                continue;
            };
            values.push(tangent_drift(&vi, &vj)?);
        }
        if values.len() < config.min_pairs.max(1) {
            omitted_hops.push(hop);
            continue;
        }
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        buckets.push(DriftBucket { hop, mean, std: var.sqrt(), pairs: values.len() });
    }
    let degenerate_nodes = cache.values().filter(|t| t.is_none()).count();
    if degenerate_nodes > 0 {
        log::warn!("{degenerate_nodes} sampled nodes have degenerate neighborhoods");
    }
    Ok(DriftCurve { k: config.k, tangent_dim: d_s, buckets, omitted_hops, degenerate_nodes })
}

fn tangent(
    cache: &mut HashMap<usize, Option<TangentBasis>>,
    f: &FeatureMatrix,
    graph: &NeighborGraph,
    i: usize,
    d_s: usize,
) -> Result<Option<TangentBasis>> {
    if let Some(t) = cache.get(&i) {
        return Ok(t.clone());
    }
    let t = match local_tangent(f, graph, i, d_s) {
        Ok(t) => Some(t),
        Err(crate::Error::Validation(_)) => None,
        Err(e) => return Err(e),
    };
    cache.insert(i, t.clone());
    Ok(t)
}

/// BFS from each source; every unordered pair found at hop h is offered to that hop's reservoir.
fn sample_pairs(graph: &NeighborGraph, config: &DriftConfig, rng: &mut RngStream) -> Vec<Reservoir> {
    let n = graph.n();
    let mut sources: Vec<usize> = if n <= config.max_sources {
        (0..n).collect()
    } else {
        rng.sample_indices(n, config.max_sources)
    };
    sources.sort_unstable();
    let mut is_source = vec![false; n];
    sources.iter().for_each(|&s| is_source[s] = true);

    let mut reservoirs: Vec<Reservoir> =
        (0..config.max_hops).map(|_| Reservoir { seen: 0, items: Vec::new() }).collect();
    let mut dist = vec![usize::MAX; n];
    let mut touched = Vec::new();
    let mut queue = VecDeque::new();
    for &s in &sources {
        dist[s] = 0;
        touched.push(s);
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let du = dist[u];
            if du == config.max_hops {
                continue;
            }
            for &v in graph.neighbors(u) {
                if dist[v] != usize::MAX {
                    continue;
                }
                dist[v] = du + 1;
                touched.push(v);
                queue.push_back(v);
                // each unordered pair once: when both ends are sources, only from the smaller
                if !is_source[v] || v > s {
                    reservoirs[du].offer((s.min(v), s.max(v)), config.sample_pairs, rng);
                }
            }
        }
        for &t in &touched {
            dist[t] = usize::MAX;
        }
        touched.clear();
    }
    reservoirs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{orthonormalize_columns, Matrix};

    fn sphere(n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = RngStream::new(seed, 0);
        let mut m = Matrix::zeros(n, 3);
        for i in 0..n {
            let v = [rng.normal(), rng.normal(), rng.normal()];
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            m.row_mut(i).iter_mut().zip(v).for_each(|(x, y)| *x = y / r);
        }
        FeatureMatrix::new(m)
    }

    fn offset_plane(n: usize, dim: usize, seed: u64) -> FeatureMatrix {
        let mut rng = RngStream::new(seed, 0);
        let frame = orthonormalize_columns(&Matrix::from_fn(dim, 3, |_, _| rng.normal())).unwrap();
        let mut m = Matrix::zeros(n, dim);
        for i in 0..n {
            let (a, b) = (rng.next_f64() * 2.0 - 1.0, rng.next_f64() * 2.0 - 1.0);
            for c in 0..dim {
                m[(i, c)] = a * frame[(c, 0)] + b * frame[(c, 1)] + 10.0 * frame[(c, 2)];
            }
        }
        FeatureMatrix::new(m)
    }

    /// On the unit sphere the tangent planes at x and y share the direction x × y,
    /// so drift = sin²θ / 2 with θ the angle between x and y.
    #[test]
    fn sphere_drift_matches_analytic_tangent_planes() {
        let f = normalize(&sphere(1500, 3));
        let g = knn_graph(&f, 12).unwrap();
        let mut worst: f64 = 0.0;
        for (i, j) in [(0, 1), (5, 900), (17, 40), (100, 1400)] {
            let vi = local_tangent(&f, &g, i, 2).unwrap();
            let vj = local_tangent(&f, &g, j, 2).unwrap();
            let c: f64 = (0..3).map(|t| f.values()[(i, t)] * f.values()[(j, t)]).sum();
            let analytic = (1.0 - c * c) / 2.0;
            worst = worst.max((tangent_drift(&vi, &vj).unwrap() - analytic).abs());
        }
        assert!(worst < 0.02, "{worst}");
    }

    fn normalize(f: &FeatureMatrix) -> FeatureMatrix {
        super::super::normalize_features(f).unwrap()
    }

    #[test]
    fn sphere_curve_increases() {
        let f = sphere(1500, 5);
        let cfg = DriftConfig { d_s: Some(2), max_hops: 6, ..DriftConfig::default() };
        let c = drift_curve(&f, &cfg, &mut RngStream::new(1, 0)).unwrap();
        let means: Vec<f64> = (1..=5).map(|h| c.bucket(h).unwrap().mean).collect();
        assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
        assert!(c.buckets.iter().all(|b| b.pairs >= MIN_BUCKET_PAIRS && (0.0..=1.0).contains(&b.mean)));
    }

    #[test]
    fn flat_plane_has_no_drift() {
        let f = offset_plane(800, 20, 9);
        let cfg = DriftConfig { d_s: Some(2), ..DriftConfig::default() };
        let c = drift_curve(&f, &cfg, &mut RngStream::new(2, 0)).unwrap();
        assert!(!c.buckets.is_empty());
        assert!(c.buckets.iter().all(|b| b.mean < 0.05), "{:?}", c.buckets);
    }

    #[test]
    fn estimated_dimension_of_a_plane() {
        let f = offset_plane(400, 20, 1);
        let c = drift_curve(&f, &DriftConfig::default(), &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(c.tangent_dim, 2);
    }

    #[test]
    fn duplicated_cluster() {
        let f = FeatureMatrix::new(Matrix::from_fn(40, 5, |_, j| (j + 1) as f64));
        let cfg = DriftConfig { d_s: Some(1), max_hops: 3, ..DriftConfig::default() };
        let c = drift_curve(&f, &cfg, &mut RngStream::new(0, 0)).unwrap();
        assert!(c.buckets.iter().all(|b| b.mean == 0.0));
        assert_eq!(c.omitted_hops.len() + c.buckets.len(), 3);
    }

    #[test]
    fn disconnected_hops_are_flagged() {
        let f = sphere(60, 2);
        let cfg = DriftConfig { d_s: Some(2), max_hops: 40, ..DriftConfig::default() };
        let c = drift_curve(&f, &cfg, &mut RngStream::new(0, 0)).unwrap();
        assert!(c.omitted_hops.contains(&40));
        assert!(c.buckets.iter().all(|b| b.pairs >= MIN_BUCKET_PAIRS));
    }

    #[test]
    fn reproducible_and_subsampled() {
        let f = sphere(600, 8);
        let cfg = DriftConfig { d_s: Some(2), max_sources: 100, max_hops: 4, ..DriftConfig::default() };
        let a = drift_curve(&f, &cfg, &mut RngStream::new(7, 1)).unwrap();
        let b = drift_curve(&f, &cfg, &mut RngStream::new(7, 1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.buckets.len(), 4);
    }

    #[test]
    fn csv_layout() {
        let c = DriftCurve {
            k: 12,
            tangent_dim: 2,
            buckets: vec![DriftBucket { hop: 1, mean: 0.25, std: 0.0, pairs: 30 }],
            omitted_hops: vec![2],
            degenerate_nodes: 0,
        };
        assert_eq!(c.to_csv(), "hop,mean_drift\n1,0.25\n");
    }
}
