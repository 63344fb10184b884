//! Few-shot episodes. Each class is split once (by `split_seed`) into
//! train/validation/test pools; an episode then draws exactly k training bags
//! per class from the train pool. Validation and test pools are shared by all
//! episodes of a split.

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Result};
use crate::numerics::{stream_key, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.6, val_fraction: 0.2, test_fraction: 0.2, split_seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|x| !(*x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid(format!("split fractions must be positive and sum to 1, got {f:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    /// Training bags per class.
    pub k: usize,
    pub num_repeats: usize,
    #[serde(default)]
    pub split: SplitSpec,
}

impl EpisodeSpec {
    pub fn new(k: usize) -> Self {
        Self { k, num_repeats: 5, split: SplitSpec::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return invalid("k must be at least 1");
        }
        if self.num_repeats == 0 {
            return invalid("num_repeats must be at least 1");
        }
        self.split.validate()
    }
}

/// Per-class pools of bag indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPools {
    pub train: Vec<Vec<usize>>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: per class, `round(f·n)` bags go to validation and test
/// (at least one each when the class has three or more bags) and the rest to train.
pub fn split_pools(dataset: &Dataset, split: &SplitSpec) -> Result<SplitPools> {
    split.validate()?;
    let root = RngStream::new(split.split_seed, stream_key("split"));
    let mut pools = SplitPools { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (c, mut members) in dataset.by_class().into_iter().enumerate() {
        root.derive(c as u64).shuffle(&mut members);
        let n = members.len();
        let take = |f: f64| if n >= 3 { ((f * n as f64).round() as usize).max(1) } else { 0 };
        let n_val = take(split.val_fraction);
        let n_test = take(split.test_fraction).min(n - n_val);
        pools.val.extend_from_slice(&members[..n_val]);
        pools.test.extend_from_slice(&members[n_val..n_val + n_test]);
        pools.train.push(members[n_val + n_test..].to_vec());
    }
    if pools.val.is_empty() || pools.test.is_empty() {
        return invalid("dataset too small: validation or test pool is empty");
    }
    pools.val.sort_unstable();
    pools.test.sort_unstable();
    Ok(pools)
}

pub fn sample_episode(dataset: &Dataset, spec: &EpisodeSpec, rng: &mut RngStream) -> Result<Episode> {
    spec.validate()?;
    let pools = split_pools(dataset, &spec.split)?;
    for (c, pool) in pools.train.iter().enumerate() {
        if pool.len() < spec.k {
            return invalid(format!("class {c} has only {} training bags, need k = {}", pool.len(), spec.k));
        }
    }
    let mut train = Vec::with_capacity(spec.k * dataset.classes);
    for pool in &pools.train {
        let picks = rng.sample_indices(pool.len(), spec.k);
        train.extend(picks.into_iter().map(|i| pool[i]));
    }
    rng.shuffle(&mut train);
    Ok(Episode { train, val: pools.val, test: pools.test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mil::Bag;
    use crate::numerics::Matrix;
    use std::collections::BTreeSet;

    fn dataset(per_class: usize, classes: usize) -> Dataset {
        let bags = (0..per_class * classes).map(|i| Bag::new(Matrix::from_fn(2, 3, |r, c| (i + r + c) as f64), i % classes)).collect();
        Dataset::new(bags, classes).unwrap()
    }

    #[test]
    fn k_per_class_and_disjoint() {
        let ds = dataset(20, 3);
        let ep = sample_episode(&ds, &EpisodeSpec::new(4), &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(ep.train.len(), 12);
        for c in 0..3 {
            assert_eq!(ep.train.iter().filter(|&&i| ds.bags[i].label == c).count(), 4);
            assert_eq!(ep.val.iter().filter(|&&i| ds.bags[i].label == c).count(), 4);
            assert_eq!(ep.test.iter().filter(|&&i| ds.bags[i].label == c).count(), 4);
        }
        let sets: Vec<BTreeSet<usize>> = [&ep.train, &ep.val, &ep.test].iter().map(|v| v.iter().copied().collect()).collect();
        assert_eq!(sets.iter().map(BTreeSet::len).sum::<usize>(), 36);
        assert!(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]));
    }

    #[test]
    fn exhausting_the_pool_returns_all_of_it() {
        let ds = dataset(20, 2);
        let pools = split_pools(&ds, &SplitSpec::default()).unwrap();
        let k = pools.train[0].len();
        assert_eq!(k, 12);
        let ep = sample_episode(&ds, &EpisodeSpec::new(k), &mut RngStream::new(3, 0)).unwrap();
        let got: BTreeSet<usize> = ep.train.iter().copied().collect();
        let want: BTreeSet<usize> = pools.train.iter().flatten().copied().collect();
        assert_eq!(got, want);
        let err = sample_episode(&ds, &EpisodeSpec::new(k + 1), &mut RngStream::new(3, 0)).unwrap_err().to_string();
        assert!(err.contains("class 0"), "{err}");
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let ds = dataset(50, 2);
        let spec = EpisodeSpec::new(8);
        let a = sample_episode(&ds, &spec, &mut RngStream::new(11, 0)).unwrap();
        assert_eq!(a, sample_episode(&ds, &spec, &mut RngStream::new(11, 0)).unwrap());
        // 30-bag train pools, 8 picks each: a collision has probability 1/C(30,8)² ≈ 3e-13
        let b = sample_episode(&ds, &spec, &mut RngStream::new(12, 0)).unwrap();
        let set = |e: &Episode| e.train.iter().copied().collect::<BTreeSet<_>>();
        assert_ne!(set(&a), set(&b));
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn bad_specs() {
        let ds = dataset(10, 2);
        assert!(sample_episode(&ds, &EpisodeSpec::new(0), &mut RngStream::new(0, 0)).is_err());
        let split = SplitSpec { train_fraction: 0.5, ..SplitSpec::default() };
        assert!(split.validate().is_err());
        assert!(split_pools(&dataset(2, 2), &SplitSpec::default()).is_err());
    }
}
