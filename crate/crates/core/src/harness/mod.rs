//! Few-shot experiment plumbing: synthetic bag datasets, episode sampling,
//! AdamW training with early stopping, evaluation metrics and the paired
//! plain-vs-MR comparison.

mod dataset;
mod episode;
mod experiment;
mod metrics;
mod optim;
mod synthetic;
mod train;

pub use dataset::{load_dataset, save_dataset, Dataset, DATASET_BAGS, DATASET_INSTANCES, DATASET_MANIFEST};
pub use episode::{sample_episode, split_pools, Episode, EpisodeSpec, SplitPools, SplitSpec};
pub use experiment::{paired_experiment, ComparisonReport, DriftComparison, DriftSettings, ExperimentConfig, PairedRow, ShotReport};
pub use metrics::{
    accuracy, auc_from_scores, average_precision, binary_auc, evaluate, macro_f1, metrics_from_probs, MetricReport,
    Metrics, SeedMetrics,
};
pub use optim::{lr_schedule, AdamW, BETA1, BETA2, EPSILON};
pub use synthetic::{gen_synthetic, GeneratedDataset, Manifold, SyntheticSpec};
pub use train::{train_model, EarlyStopping, EpochRecord, StopDecision, TrainConfig, TrainHistory};

/// Version stamped into every JSON report this crate writes.
pub const SCHEMA_VERSION: u32 = 1;
