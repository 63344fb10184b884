//! Paired plain-vs-MR comparison: for every (k, seed) both models start from
//! the same initialization stream (so MR anchors equal the plain model's
//! initial V and U), see the same episode and the same shuffling/dropout
//! streams, and are evaluated on the same test bags.

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, MetricReport, Metrics, SeedMetrics};
use super::train::{train_model, TrainConfig, TrainHistory};
use super::{sample_episode, Dataset, Episode, EpisodeSpec, SplitSpec, SCHEMA_VERSION};
use crate::error::{invalid, Result};
use crate::geometry::{drift_curve, DriftConfig, DriftCurve, FeatureMatrix};
use crate::mil::{ABMILModel, AttentionKind, Bag, ModelSpec, Projection};
use crate::mrblock::Variant;
use crate::numerics::{stream_key, Matrix, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSettings {
    pub config: DriftConfig,
    /// Test instances are subsampled to at most this many points.
    pub max_points: usize,
}

impl Default for DriftSettings {
    fn default() -> Self {
        Self { config: DriftConfig::default(), max_points: 1500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub hidden_dim: usize,
    pub mr_rank: usize,
    pub mr_variant: Variant,
    /// Drift curves of the V projection before and after training, for the
    /// first seed of every k. Skipped when `None`.
    pub drift: Option<DriftSettings>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            shots: vec![8],
            seeds: (0..5).collect(),
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            hidden_dim: 256,
            mr_rank: 32,
            mr_variant: Variant::Full,
            drift: Some(DriftSettings::default()),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shots.is_empty() || self.shots.contains(&0) {
            return invalid("shots must be a nonempty list of positive integers");
        }
        if self.seeds.is_empty() {
            return invalid("at least one seed is required");
        }
        if self.hidden_dim == 0 {
            return invalid("hidden_dim must be at least 1");
        }
        self.split.validate()?;
        self.train.validate()
    }

    pub fn model_specs(&self, dataset: &Dataset) -> (ModelSpec, ModelSpec) {
        let base = ModelSpec {
            input_dim: dataset.input_dim(),
            hidden_dim: self.hidden_dim,
            classes: dataset.classes,
            dropout: self.train.dropout,
            attention: AttentionKind::Linear,
        };
        let mr = ModelSpec { attention: AttentionKind::Mr { rank: self.mr_rank, variant: self.mr_variant }, ..base };
        (base, mr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub k: usize,
    pub seed: u64,
    pub plain: Metrics,
    pub mr: Metrics,
    /// `mr − plain`
    pub delta: Metrics,
    pub plain_epochs: usize,
    pub plain_best_epoch: usize,
    pub mr_epochs: usize,
    pub mr_best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftComparison {
    pub seed: u64,
    pub points: usize,
    pub original: DriftCurve,
    pub plain_before: DriftCurve,
    pub plain_after: DriftCurve,
    pub mr_before: DriftCurve,
    pub mr_after: DriftCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotReport {
    pub k: usize,
    pub plain: MetricReport,
    pub mr: MetricReport,
    pub mean_delta: Metrics,
    pub rows: Vec<PairedRow>,
    pub drift: Option<DriftComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub bags: usize,
    pub classes: usize,
    pub input_dim: usize,
    pub config: ExperimentConfig,
    pub plain_model: ModelSpec,
    pub mr_model: ModelSpec,
    pub plain_params: usize,
    pub mr_params: usize,
    pub shots: Vec<ShotReport>,
}

impl ComparisonReport {
    /// Flat rows `k,seed,model,auc,auprc,f1,accuracy,params`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,seed,model,auc,auprc,f1,accuracy,params\n");
        for shot in &self.shots {
            for (name, report) in [("abmil", &shot.plain), ("mr_abmil", &shot.mr)] {
                for row in &report.rows {
                    let m = row.metrics;
                    out.push_str(&format!(
                        "{},{},{name},{},{},{},{},{}\n",
                        shot.k, row.seed, m.auc, m.auprc, m.f1, m.accuracy, report.trainable_params
                    ));
                }
            }
        }
        out
    }
}

fn projected_drift(points: &Matrix, v: &Projection, settings: &DriftSettings, seed: u64) -> Result<DriftCurve> {
    let f = FeatureMatrix::new(v.apply(points)?);
    drift_curve(&f, &settings.config, &mut RngStream::new(seed, stream_key("drift.curve")))
}

fn drift_comparison(
    dataset: &Dataset,
    episode: &Episode,
    seed: u64,
    settings: &DriftSettings,
    models: [&ABMILModel; 4],
) -> Result<DriftComparison> {
    let pooled = dataset.pooled_instances(&episode.test)?;
    let points = if pooled.rows() > settings.max_points {
        let mut idx = RngStream::new(seed, stream_key("drift.points")).sample_indices(pooled.rows(), settings.max_points);
        idx.sort_unstable();
        pooled.select_rows(&idx)?
    } else {
        pooled
    };
    let original =
        drift_curve(&FeatureMatrix::new(points.clone()), &settings.config, &mut RngStream::new(seed, stream_key("drift.curve")))?;
    let [pb, pa, mb, ma] = models.map(|m| projected_drift(&points, &m.attention.v, settings, seed));
    Ok(DriftComparison {
        seed,
        points: points.rows(),
        original,
        plain_before: pb?,
        plain_after: pa?,
        mr_before: mb?,
        mr_after: ma?,
    })
}

struct Trained {
    model: ABMILModel,
    history: TrainHistory,
    metrics: Metrics,
}

fn train_and_eval(init: ABMILModel, dataset: &Dataset, episode: &Episode, config: &TrainConfig) -> Result<Trained> {
    let (model, history) = train_model(init, dataset, episode, config)?;
    let test: Vec<&Bag> = episode.test.iter().map(|&i| &dataset.bags[i]).collect();
    let metrics = evaluate(&model, &test)?;
    Ok(Trained { model, history, metrics })
}

pub fn paired_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<ComparisonReport> {
    config.validate()?;
    let (plain_spec, mr_spec) = config.model_specs(dataset);
    let probe = RngStream::new(0, 0);
    let plain_params = ABMILModel::new(&plain_spec, &probe)?.trainable_param_count();
    let mr_params = ABMILModel::new(&mr_spec, &probe)?.trainable_param_count();

    let mut shots = Vec::with_capacity(config.shots.len());
    for &k in &config.shots {
        let episode_spec = EpisodeSpec { k, num_repeats: config.seeds.len(), split: config.split.clone() };
        let mut rows = Vec::with_capacity(config.seeds.len());
        let mut drift = None;
        for (si, &seed) in config.seeds.iter().enumerate() {
            let mut episode_rng = RngStream::new(seed, stream_key("episode")).derive(k as u64);
            let episode = sample_episode(dataset, &episode_spec, &mut episode_rng)?;
            let init = RngStream::new(seed, stream_key("model"));
            let plain0 = ABMILModel::new(&plain_spec, &init)?;
            let mr0 = ABMILModel::new(&mr_spec, &init)?;
            let train = TrainConfig { seed, ..config.train.clone() };
            let plain = train_and_eval(plain0.clone(), dataset, &episode, &train)?;
            let mr = train_and_eval(mr0.clone(), dataset, &episode, &train)?;
            log::info!(
                "k={k} seed={seed}: abmil auc {:.4} ({} epochs), mr_abmil auc {:.4} ({} epochs)",
                plain.metrics.auc,
                plain.history.epochs.len(),
                mr.metrics.auc,
                mr.history.epochs.len()
            );
            if si == 0 {
                if let Some(settings) = &config.drift {
                    drift = Some(drift_comparison(dataset, &episode, seed, settings, [&plain0, &plain.model, &mr0, &mr.model])?);
                }
            }
            rows.push(PairedRow {
                k,
                seed,
                plain: plain.metrics,
                mr: mr.metrics,
                delta: mr.metrics.minus(plain.metrics),
                plain_epochs: plain.history.epochs.len(),
                plain_best_epoch: plain.history.best_epoch,
                mr_epochs: mr.history.epochs.len(),
                mr_best_epoch: mr.history.best_epoch,
            });
        }
        let report = |pick: fn(&PairedRow) -> Metrics, params| {
            MetricReport::new(rows.iter().map(|r| SeedMetrics { seed: r.seed, metrics: pick(r) }).collect(), params)
        };
        let plain = report(|r| r.plain, plain_params);
        let mr = report(|r| r.mr, mr_params);
        let mean_delta = mr.mean.minus(plain.mean);
        shots.push(ShotReport { k, plain, mr, mean_delta, rows, drift });
    }
    Ok(ComparisonReport {
        schema_version: SCHEMA_VERSION,
        bags: dataset.bags.len(),
        classes: dataset.classes,
        input_dim: dataset.input_dim(),
        config: config.clone(),
        plain_model: plain_spec,
        mr_model: mr_spec,
        plain_params,
        mr_params,
        shots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{gen_synthetic, metrics::evaluate, Manifold, SyntheticSpec};
    use crate::mrblock::MRBlock;

    fn small_dataset() -> Dataset {
        let spec = SyntheticSpec {
            ambient_dim: 16,
            bags_per_class: 10,
            min_instances: 10,
            max_instances: 16,
            ..SyntheticSpec::reference(Manifold::Sphere)
        };
        gen_synthetic(&spec, &RngStream::new(9, 0)).unwrap().dataset
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            shots: vec![2, 3],
            seeds: vec![0, 1, 2],
            train: TrainConfig { lr: 5e-3, min_epochs: 3, max_epochs: 8, patience: 2, ..TrainConfig::default() },
            hidden_dim: 8,
            mr_rank: 2,
            drift: Some(DriftSettings {
                config: DriftConfig { k: 6, max_hops: 3, min_pairs: 5, ..DriftConfig::default() },
                max_points: 200,
            }),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn report_shape_and_determinism() {
        let ds = small_dataset();
        let cfg = small_config();
        let report = paired_experiment(&ds, &cfg).unwrap();
        assert_eq!(report.shots.len(), 2);
        for shot in &report.shots {
            assert_eq!(shot.rows.len(), 3);
            assert_eq!(shot.plain.rows.len(), 3);
            assert_eq!(shot.mr.rows.len(), 3);
            let drift = shot.drift.as_ref().unwrap();
            // both models start from the same map
            assert_eq!(drift.plain_before, drift.mr_before);
            for row in &shot.rows {
                assert!(row.plain_epochs >= 3 && row.mr_epochs >= 3);
                assert_eq!(row.delta, row.mr.minus(row.plain));
            }
        }
        assert!(report.mr_params < report.plain_params);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3);
        let again = paired_experiment(&ds, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn self_comparison_has_zero_deltas() {
        let ds = small_dataset();
        let cfg = small_config();
        let (plain_spec, _) = cfg.model_specs(&ds);
        let ep = sample_episode(&ds, &EpisodeSpec::new(3), &mut RngStream::new(0, 0)).unwrap();
        let init = ABMILModel::new(&plain_spec, &RngStream::new(4, 0)).unwrap();
        let trained = train_and_eval(init, &ds, &ep, &cfg.train).unwrap();
        // MR with no low-rank path whose anchors are the trained dense weights
        let wrap = |p: &Projection| {
            let b = p.linear_part();
            let (d0, d1) = b.shape();
            Projection::Mr(MRBlock::from_parts(Variant::MinusLRP, b, Matrix::zeros(d0, 1), Matrix::zeros(1, d1)).unwrap())
        };
        let mut twin = trained.model.clone();
        twin.attention.v = wrap(&trained.model.attention.v);
        twin.attention.u = wrap(&trained.model.attention.u);
        let test: Vec<&Bag> = ep.test.iter().map(|&i| &ds.bags[i]).collect();
        let delta = evaluate(&twin, &test).unwrap().minus(trained.metrics);
        assert_eq!(delta, Metrics::default());
    }

    #[test]
    fn rejects_bad_configs() {
        let ds = small_dataset();
        assert!(paired_experiment(&ds, &ExperimentConfig { seeds: vec![], ..small_config() }).is_err());
        assert!(paired_experiment(&ds, &ExperimentConfig { shots: vec![0], ..small_config() }).is_err());
        assert!(paired_experiment(&ds, &ExperimentConfig { shots: vec![50], ..small_config() }).is_err());
    }
}
