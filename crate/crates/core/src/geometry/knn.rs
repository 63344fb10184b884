use serde::{Deserialize, Serialize};

use super::{ensure_normalized, FeatureMatrix};
use crate::error::{invalid, Result};

pub const DEFAULT_K: usize = 12;

const ROW_BLOCK: usize = 256;

/// Union-symmetrized cosine k-nearest-neighbor graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub k: usize,
    /// Sorted neighbor lists, no self-loops.
    pub adjacency: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency
            .iter()
            .enumerate()
            .all(|(i, adj)| adj.iter().all(|&j| j != i && self.adjacency[j].binary_search(&i).is_ok()))
    }
}

/// Similarities are compared on a 2⁻⁴⁰ grid so that rounding noise between
/// exact duplicates cannot override the lower-index tie-break.
fn quantize(sim: f64) -> i64 {
    (sim * (1u64 << 40) as f64).round() as i64
}

/// Link each point to its `k` most cosine-similar other points, then take the
/// union of the directed lists. Ties go to the lower index.
pub fn knn_graph(f: &FeatureMatrix, k: usize) -> Result<NeighborGraph> {
    let n = f.n();
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if n <= k {
        return invalid(format!("k-NN graph needs more than k = {k} points, got {n}"));
    }
    let f = ensure_normalized(f)?;
    let values = f.values();

    let mut adjacency: Vec<Vec<usize>> = vec![Vec::with_capacity(2 * k); n];
    let mut scratch: Vec<(i64, usize)> = Vec::with_capacity(n);
    for start in (0..n).step_by(ROW_BLOCK) {
        let end = (start + ROW_BLOCK).min(n);
        let block = values.select_rows(&(start..end).collect::<Vec<_>>())?;
        let sims = block.matmul_tr(values)?;
        for (bi, i) in (start..end).enumerate() {
            scratch.clear();
            scratch.extend(
                sims.row(bi).iter().enumerate().filter(|&(j, _)| j != i).map(|(j, &s)| (quantize(s), j)),
            );
            let by_rank = |a: &(i64, usize), b: &(i64, usize)| b.0.cmp(&a.0).then(a.1.cmp(&b.1));
            scratch.select_nth_unstable_by(k - 1, by_rank);
            scratch[..k].sort_unstable_by(by_rank);
            for &(_, j) in &scratch[..k] {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
    }
    Ok(NeighborGraph { k, adjacency })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn nearly_parallel_pair_is_linked() {
        let f = FeatureMatrix::new(
            Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.99, 0.01, 0.0], [0.0, 0.0, 1.0]]).unwrap(),
        );
        let g = knn_graph(&f, 1).unwrap();
        assert!(g.neighbors(0).contains(&1));
        assert!(g.neighbors(1).contains(&0));
        assert!(g.is_symmetric());
    }

    #[test]
    fn duplicates_are_mutual_top_neighbors() {
        let f = FeatureMatrix::new(
            Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0], [1.0, 2.0], [0.5, 1.0], [-2.0, 0.3]]).unwrap(),
        );
        // rows 0, 2 and 3 all point the same way; each takes the lowest-index twin.
        // Rows 1 and 4 also pick row 0 (lowest index among the tied three), so the
        // union adds them to its list.
        let g = knn_graph(&f, 1).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2, 3, 4]);
        assert_eq!(g.neighbors(2), &[0]);
        assert!(g.neighbors(2).contains(&0));
        assert!(g.neighbors(3).contains(&0));
    }

    #[test]
    fn needs_more_points_than_k() {
        let f = FeatureMatrix::new(Matrix::identity(3));
        assert!(knn_graph(&f, 3).is_err());
        assert!(knn_graph(&f, 0).is_err());
    }

    #[test]
    fn no_self_loops() {
        let f = FeatureMatrix::new(Matrix::from_fn(30, 4, |i, j| ((i * 5 + j) as f64).cos()));
        let g = knn_graph(&f, 5).unwrap();
        assert!(g.is_symmetric());
        assert!(g.adjacency.iter().all(|a| a.len() >= 5));
    }
}
