//! TOML run configuration. Every section is optional and every key inside a
//! section is optional; unknown keys are rejected. Command-line flags take
//! precedence over the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

pub const SEED_ENV: &str = "MRGEO_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub tangent: TangentSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub episode: EpisodeSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TangentSection {
    pub k: Option<usize>,
    pub ds: Option<usize>,
    pub max_hops: Option<usize>,
    pub sample_pairs: Option<usize>,
    pub min_pairs: Option<usize>,
    pub max_sources: Option<usize>,
    /// Points used for drift curves in `compare`.
    pub max_points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub d0: Option<usize>,
    pub d1: Option<usize>,
    pub trials: Option<usize>,
    pub scheme: Option<String>,
    pub rank: Option<usize>,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub task: Option<String>,
    pub intrinsic_dim: Option<usize>,
    pub ambient_dim: Option<usize>,
    pub classes: Option<usize>,
    pub bags_per_class: Option<usize>,
    pub min_instances: Option<usize>,
    pub max_instances: Option<usize>,
    pub witness_rate: Option<f64>,
    pub noise: Option<f64>,
    pub cluster_radius: Option<f64>,
    pub offset_norm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub attention: Option<String>,
    pub hidden_dim: Option<usize>,
    pub rank: Option<usize>,
    pub variant: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub start_factor: Option<f64>,
    pub end_factor: Option<f64>,
    pub patience: Option<usize>,
    pub min_epochs: Option<usize>,
    pub max_epochs: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSection {
    pub k: Option<Vec<usize>>,
    pub seeds: Option<usize>,
    pub train_fraction: Option<f64>,
    pub val_fraction: Option<f64>,
    pub test_fraction: Option<f64>,
    pub split_seed: Option<u64>,
}

impl RunConfig {
    /// Read a config file; relative paths inside it are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        if let Some(out) = &cfg.out {
            if out.is_relative() {
                cfg.out = Some(path.parent().unwrap_or(Path::new(".")).join(out));
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Flag,
    Environment,
    Config,
    Default,
}

/// flag > `MRGEO_SEED` > config file > 42.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: Option<u64>) -> Result<(u64, SeedSource), CliError> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    if let Some(raw) = env {
        let s = raw
            .trim()
            .parse::<u64>()
            .map_err(|_| CliError::usage(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        return Ok((s, SeedSource::Environment));
    }
    if let Some(s) = config {
        return Ok((s, SeedSource::Config));
    }
    Ok((DEFAULT_SEED, SeedSource::Default))
}
