//! Subcommand implementations. Every value is taken from its flag first, then
//! from the config file, then from the built-in default.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{ArgGroup, Args};
use serde::Serialize;
use serde_json::json;

use mrgeo::geometry::{drift_curve, normalize_features, spectral_summary, DriftConfig, DriftCurve, FeatureMatrix, SpectralSummary};
use mrgeo::harness::{
    evaluate, gen_synthetic, load_dataset, DriftComparison, paired_experiment, sample_episode, save_dataset, Dataset, DriftSettings,
    EpisodeSpec, ExperimentConfig, Manifold, MetricReport, SeedMetrics, SplitSpec, SyntheticSpec, TrainConfig,
    TrainHistory, DATASET_BAGS, DATASET_INSTANCES, DATASET_MANIFEST,
};
use mrgeo::io::{load_matrix, write_bin};
use mrgeo::mil::{save_checkpoint, ABMILModel, AttentionKind, Bag, ModelSpec, Projection, CHECKPOINT_BIN, CHECKPOINT_MANIFEST};
use mrgeo::mrblock::{approximate_target, approximate_with_rank, mr_forward, read_block, write_block, Variant, BLOCK_MAGIC};
use mrgeo::numerics::{stream_key, Matrix, RngStream};
use mrgeo::randproj::{
    verify_cosine, verify_full_rank, verify_inner_product, verify_pairwise_distances, verify_rank_product,
    verify_structure_preservation, verify_variance_scaling, CheckConfig, InitScheme, PropertyReport, StructureProperty,
};

use crate::config::{DataSection, ModelSection, TangentSection, TrainSection};
use crate::{resolve_input, CliError, CliResult, Context, SCHEMA_VERSION};

/// Row count above which `spectrum` and `tangent` need `--allow-large`.
pub const LARGE_N: usize = 200_000;

const CHECK_IDS: [&str; 6] =
    ["variance_scaling", "inner_product", "cosine", "pairwise_distances", "full_rank", "rank_product"];

fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

fn parse_named<T: FromStr<Err = mrgeo::Error>>(raw: &str) -> CliResult<T> {
    raw.parse().map_err(|e: mrgeo::Error| CliError::usage(e.to_string()))
}

/// Parameter validation failures are the caller's fault.
fn as_usage(e: mrgeo::Error) -> CliError {
    CliError::usage(e.to_string())
}

fn load_features(path: &Path, allow_large: bool) -> CliResult<Matrix> {
    let resolved = resolve_input(path)?;
    let m = load_matrix(&resolved)?;
    if m.rows() > LARGE_N && !allow_large {
        return Err(CliError::usage(format!(
            "{} has {} rows; more than {LARGE_N} requires --allow-large",
            path.display(),
            m.rows()
        )));
    }
    Ok(m)
}

fn bin_bytes(m: &Matrix) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_bin(m, &mut buf)?;
    Ok(buf)
}

// ---------------------------------------------------------------- spectrum

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Feature matrix, CSV or MRGF binary.
    pub file: PathBuf,
    /// Accept more than 200,000 rows.
    #[arg(long)]
    pub allow_large: bool,
}

#[derive(Serialize)]
struct SpectrumReport<'a> {
    schema_version: u32,
    input: String,
    n: usize,
    dim: usize,
    #[serde(flatten)]
    summary: &'a SpectralSummary,
}

pub fn spectrum(ctx: &mut Context, args: SpectrumArgs) -> CliResult<()> {
    let f = FeatureMatrix::new(load_features(&args.file, args.allow_large)?);
    let summary = spectral_summary(&normalize_features(&f)?)?;
    log::info!("effective rank {:.4} over {} eigenvalues", summary.effective_rank, summary.eigenvalues.len());
    let mut csv = String::from("index,eigenvalue,probability\n");
    for (i, (l, p)) in summary.eigenvalues.iter().zip(&summary.probabilities).enumerate() {
        csv.push_str(&format!("{},{l},{p}\n", i + 1));
    }
    let report =
        SpectrumReport { schema_version: SCHEMA_VERSION, input: args.file.display().to_string(), n: f.n(), dim: f.dim(), summary: &summary };
    ctx.write_json("spectrum.json", &report)?;
    ctx.write_bytes("eigenvalues.csv", csv.as_bytes())
}

// ---------------------------------------------------------------- tangent

#[derive(Debug, Args)]
pub struct DriftFlags {
    /// Neighbors per point in the k-NN graph.
    #[arg(long)]
    pub k: Option<usize>,
    /// Tangent dimension; estimated from the data when omitted.
    #[arg(long)]
    pub ds: Option<usize>,
    #[arg(long)]
    pub max_hops: Option<usize>,
    /// Pairs sampled per hop.
    #[arg(long)]
    pub sample_pairs: Option<usize>,
    /// Hops with fewer pairs are omitted.
    #[arg(long)]
    pub min_pairs: Option<usize>,
    /// BFS sources; all points when N is at most this.
    #[arg(long)]
    pub max_sources: Option<usize>,
}

fn drift_config(flags: Option<&DriftFlags>, section: &TangentSection) -> DriftConfig {
    let d = DriftConfig::default();
    let f = |get: fn(&DriftFlags) -> Option<usize>| flags.and_then(get);
    DriftConfig {
        k: pick(f(|a| a.k), section.k, d.k),
        d_s: f(|a| a.ds).or(section.ds).or(d.d_s),
        max_hops: pick(f(|a| a.max_hops), section.max_hops, d.max_hops),
        sample_pairs: pick(f(|a| a.sample_pairs), section.sample_pairs, d.sample_pairs),
        min_pairs: pick(f(|a| a.min_pairs), section.min_pairs, d.min_pairs),
        max_sources: pick(f(|a| a.max_sources), section.max_sources, d.max_sources),
    }
}

#[derive(Debug, Args)]
pub struct TangentArgs {
    /// Feature matrix, CSV or MRGF binary.
    pub file: PathBuf,
    #[command(flatten)]
    pub drift: DriftFlags,
    /// Map applied to the features first: a d × d' matrix (CSV or MRGF) or an MR block (MRBK).
    #[arg(long, value_name = "FILE")]
    pub transform: Option<PathBuf>,
    /// Accept more than 200,000 rows.
    #[arg(long)]
    pub allow_large: bool,
}

#[derive(Serialize)]
struct TransformInfo {
    path: String,
    kind: &'static str,
    input_dim: usize,
    output_dim: usize,
}

#[derive(Serialize)]
struct TangentReport {
    schema_version: u32,
    input: String,
    n: usize,
    dim: usize,
    transform: Option<TransformInfo>,
    config: DriftConfig,
    curve: DriftCurve,
}

fn apply_transform(x: &Matrix, path: &Path) -> CliResult<(Matrix, TransformInfo)> {
    let resolved = resolve_input(path)?;
    let mut magic = [0u8; 4];
    let is_block = File::open(&resolved)?.read(&mut magic)? == 4 && &magic == BLOCK_MAGIC;
    let (y, kind, d_in) = if is_block {
        let block = read_block(File::open(&resolved)?)?;
        (mr_forward(&block, x)?, "mr_block", block.d0())
    } else {
        let map = load_matrix(&resolved)?;
        (x.matmul(&map)?, "linear", map.rows())
    };
    let info = TransformInfo { path: path.display().to_string(), kind, input_dim: d_in, output_dim: y.cols() };
    Ok((y, info))
}

pub fn tangent(ctx: &mut Context, args: TangentArgs) -> CliResult<()> {
    let config = drift_config(Some(&args.drift), &ctx.config.tangent);
    let mut x = load_features(&args.file, args.allow_large)?;
    let mut transform = None;
    if let Some(path) = &args.transform {
        let (y, info) = apply_transform(&x, path)?;
        x = y;
        transform = Some(info);
    }
    let f = FeatureMatrix::new(x);
    let mut rng = RngStream::new(ctx.seed, stream_key("tangent"));
    let curve = drift_curve(&f, &config, &mut rng)?;
    for b in &curve.buckets {
        log::info!("hop {}: drift {:.4} over {} pairs", b.hop, b.mean, b.pairs);
    }
    let csv = curve.to_csv();
    let report = TangentReport {
        schema_version: SCHEMA_VERSION,
        input: args.file.display().to_string(),
        n: f.n(),
        dim: f.dim(),
        transform,
        config,
        curve,
    };
    ctx.write_json("drift.json", &report)?;
    ctx.write_bytes("drift.csv", csv.as_bytes())
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Property ids to check, or `all`.
    #[arg(long = "property", value_name = "ID", num_args = 1.., required = true)]
    pub properties: Vec<String>,
    /// Input dimension (default 128; structure checks keep their own unless given).
    #[arg(long)]
    pub d0: Option<usize>,
    /// Output dimension (default 64; structure checks keep their own unless given).
    #[arg(long)]
    pub d1: Option<usize>,
    /// Monte-Carlo trials (default 2000).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Initializer, e.g. kaiming_uniform, xavier_normal(2.0).
    #[arg(long)]
    pub scheme: Option<String>,
    /// Factor rank for rank_product (default 4).
    #[arg(long)]
    pub rank: Option<usize>,
    /// Distortion for pairwise_distances (default 0.3).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Failure probability for pairwise_distances (default 0.01).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Point count for pairwise_distances (default 50).
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Serialize)]
struct VerifyReport {
    schema_version: u32,
    seed: u64,
    scheme: InitScheme,
    all_pass: bool,
    reports: Vec<PropertyReport>,
}

fn property_ids(requested: &[String]) -> CliResult<Vec<&'static str>> {
    let known: Vec<&'static str> = CHECK_IDS.iter().chain(StructureProperty::IDS.iter()).copied().collect();
    let mut out = Vec::new();
    for raw in requested.iter().flat_map(|s| s.split(',')) {
        let raw = raw.trim();
        if raw == "all" {
            out.extend(known.iter().copied());
            continue;
        }
        match known.iter().find(|&&id| id == raw) {
            Some(&id) => out.push(id),
            None => return Err(CliError::usage(format!("unknown property '{raw}'; known: all, {}", known.join(", ")))),
        }
    }
    let mut seen = std::collections::HashSet::new();
    out.retain(|id| seen.insert(*id));
    Ok(out)
}

fn override_dims(p: &mut StructureProperty, new_d0: Option<usize>, new_d1: Option<usize>) {
    let (d0, d1) = match p {
        StructureProperty::ConditionNumber { d0, d1, .. }
        | StructureProperty::RestrictedIsometry { d0, d1, .. }
        | StructureProperty::SubspaceEmbedding { d0, d1, .. }
        | StructureProperty::ClusterLabels { d0, d1, .. }
        | StructureProperty::NearestNeighbors { d0, d1, .. }
        | StructureProperty::SimplexVolume { d0, d1, .. } => (d0, d1),
    };
    if let Some(v) = new_d0 {
        *d0 = v;
    }
    if let Some(v) = new_d1 {
        *d1 = v;
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

pub fn verify(ctx: &mut Context, args: VerifyArgs) -> CliResult<()> {
    let sec = &ctx.config.verify;
    let given_d0 = args.d0.or(sec.d0);
    let given_d1 = args.d1.or(sec.d1);
    let (d0, d1) = (given_d0.unwrap_or(128), given_d1.unwrap_or(64));
    let scheme = match args.scheme.as_deref().or(sec.scheme.as_deref()) {
        Some(s) => parse_named::<InitScheme>(s)?,
        None => InitScheme::default(),
    };
    let cfg = CheckConfig { scheme, trials: pick(args.trials, sec.trials, CheckConfig::default().trials), tolerance: None };
    let rank = pick(args.rank, sec.rank, 4);
    let eps = pick(args.eps, sec.eps, 0.3);
    let delta = pick(args.delta, sec.delta, 0.01);
    let points = pick(args.points, sec.points, 50);
    if d0 == 0 || d1 == 0 || cfg.trials == 0 {
        return Err(CliError::usage("d0, d1 and trials must be positive"));
    }

    let mut reports = Vec::new();
    for id in property_ids(&args.properties)? {
        let mut rng = RngStream::new(ctx.seed, stream_key("verify")).derive(stream_key(id));
        let mut inputs = RngStream::new(ctx.seed, stream_key("verify.inputs")).derive(stream_key(id));
        let report = match id {
            "variance_scaling" => {
                let g = gaussian(d0, d0, &mut inputs);
                let sigma = g.matmul_tr(&g)?.scale(1.0 / d0 as f64);
                verify_variance_scaling(d0, d1, &sigma, &cfg, &mut rng)
            }
            "inner_product" | "cosine" => {
                let g1: Vec<f64> = (0..d0).map(|_| inputs.normal()).collect();
                let g2: Vec<f64> = (0..d0).map(|_| inputs.normal()).collect();
                let v: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| 0.6 * a + 0.8 * b).collect();
                if id == "cosine" {
                    verify_cosine(&g1, &v, d1, &cfg, &mut rng)
                } else {
                    verify_inner_product(&g1, &v, d1, &cfg, &mut rng)
                }
            }
            "pairwise_distances" => {
                let x = gaussian(points, d0, &mut inputs);
                verify_pairwise_distances(&x, d1, eps, delta, &cfg, &mut rng)
            }
            "full_rank" => verify_full_rank(d0, d1, &cfg, &mut rng),
            "rank_product" => verify_rank_product(d0, d1, rank, &cfg, &mut rng),
            other => {
                let mut prop = StructureProperty::defaults(other)?;
                override_dims(&mut prop, given_d0, given_d1);
                verify_structure_preservation(&prop, &cfg, &mut rng)
            }
        }
        .map_err(|e| match e {
            mrgeo::Error::Validation(_) | mrgeo::Error::Dimension(_) => CliError::usage(format!("{id}: {e}")),
            other => CliError::Runtime(other),
        })?;
        log::info!("{id}: {} (empirical {}, theoretical {})", if report.pass { "pass" } else { "FAIL" }, report.empirical, report.theoretical);
        reports.push(report);
    }
    let all_pass = reports.iter().all(|r| r.pass);
    ctx.write_json("verify.json", &VerifyReport { schema_version: SCHEMA_VERSION, seed: ctx.seed, scheme, all_pass, reports })
}

// ---------------------------------------------------------------- approx

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("budget").required(true).args(["eps", "rank"])))]
pub struct ApproxArgs {
    /// Target matrix A*, CSV or MRGF.
    #[arg(long, value_name = "FILE")]
    pub target: PathBuf,
    /// Anchor matrix B, same shape as the target.
    #[arg(long, value_name = "FILE")]
    pub anchor: PathBuf,
    /// Smallest rank whose Frobenius error is within this bound.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Fixed correction rank.
    #[arg(long)]
    pub rank: Option<usize>,
}

#[derive(Serialize)]
struct ApproxReport {
    schema_version: u32,
    target: String,
    anchor: String,
    shape: (usize, usize),
    requested_eps: Option<f64>,
    requested_rank: Option<usize>,
    rank: usize,
    achieved_error: f64,
    tail: f64,
    at_floor: bool,
    /// `[W2 file, W1 file]` when the rank is positive.
    factors: Option<[&'static str; 2]>,
}

pub fn approx(ctx: &mut Context, args: ApproxArgs) -> CliResult<()> {
    let a = load_matrix(&resolve_input(&args.target)?)?;
    let b = load_matrix(&resolve_input(&args.anchor)?)?;
    let result = match (args.eps, args.rank) {
        (Some(eps), _) => approximate_target(&a, &b, eps),
        (None, Some(r)) => approximate_with_rank(&a, &b, r),
        (None, None) => unreachable!("clap requires one of --eps and --rank"),
    }
    .map_err(as_usage)?;
    log::info!("rank {} reaches error {:.6e}", result.rank, result.achieved_error);
    let mut factors = None;
    if let Some((w2, w1)) = &result.factors {
        ctx.write_bytes("w2.bin", &bin_bytes(w2)?)?;
        ctx.write_bytes("w1.bin", &bin_bytes(w1)?)?;
        factors = Some(["w2.bin", "w1.bin"]);
    }
    let report = ApproxReport {
        schema_version: SCHEMA_VERSION,
        target: args.target.display().to_string(),
        anchor: args.anchor.display().to_string(),
        shape: a.shape(),
        requested_eps: args.eps,
        requested_rank: if args.eps.is_some() { None } else { args.rank },
        rank: result.rank,
        achieved_error: result.achieved_error,
        tail: result.tail,
        at_floor: result.at_floor,
        factors,
    };
    ctx.write_json("approx.json", &report)
}

// ---------------------------------------------------------------- datasets

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Synthetic manifold: flat_plane, sphere or swirl (default sphere).
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub intrinsic_dim: Option<usize>,
    #[arg(long)]
    pub ambient_dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub bags_per_class: Option<usize>,
    #[arg(long)]
    pub min_instances: Option<usize>,
    #[arg(long)]
    pub max_instances: Option<usize>,
    /// Fraction of each bag drawn near its class center.
    #[arg(long)]
    pub witness_rate: Option<f64>,
    /// Expected norm of the additive noise vector.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub cluster_radius: Option<f64>,
    #[arg(long)]
    pub offset_norm: Option<f64>,
}

impl DataArgs {
    fn spec(&self, sec: &DataSection) -> CliResult<SyntheticSpec> {
        let manifold = match self.task.as_deref().or(sec.task.as_deref()) {
            Some(t) => parse_named::<Manifold>(t)?,
            None => Manifold::Sphere,
        };
        let r = SyntheticSpec::reference(manifold);
        let spec = SyntheticSpec {
            manifold,
            intrinsic_dim: pick(self.intrinsic_dim, sec.intrinsic_dim, r.intrinsic_dim),
            ambient_dim: pick(self.ambient_dim, sec.ambient_dim, r.ambient_dim),
            classes: pick(self.classes, sec.classes, r.classes),
            bags_per_class: pick(self.bags_per_class, sec.bags_per_class, r.bags_per_class),
            min_instances: pick(self.min_instances, sec.min_instances, r.min_instances),
            max_instances: pick(self.max_instances, sec.max_instances, r.max_instances),
            witness_rate: pick(self.witness_rate, sec.witness_rate, r.witness_rate),
            noise: pick(self.noise, sec.noise, r.noise),
            cluster_radius: pick(self.cluster_radius, sec.cluster_radius, r.cluster_radius),
            offset_norm: pick(self.offset_norm, sec.offset_norm, r.offset_norm),
        };
        spec.validate().map_err(as_usage)?;
        Ok(spec)
    }

    fn any_override(&self) -> bool {
        self.intrinsic_dim.is_some()
            || self.ambient_dim.is_some()
            || self.classes.is_some()
            || self.bags_per_class.is_some()
            || self.min_instances.is_some()
            || self.max_instances.is_some()
            || self.witness_rate.is_some()
            || self.noise.is_some()
            || self.cluster_radius.is_some()
            || self.offset_norm.is_some()
    }
}

fn generate(spec: &SyntheticSpec, seed: u64) -> CliResult<Dataset> {
    Ok(gen_synthetic(spec, &RngStream::new(seed, stream_key("dataset")))?.dataset)
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

pub fn gen(ctx: &mut Context, args: GenArgs) -> CliResult<()> {
    let spec = args.data.spec(&ctx.config.data)?;
    let ds = generate(&spec, ctx.seed)?;
    log::info!("{} bags, {} instances in R^{}", ds.bags.len(), ds.instance_count(), ds.input_dim());
    save_dataset(&ds, Some(json!({ "spec": spec, "seed": ctx.seed })), &ctx.out)?;
    for name in [DATASET_MANIFEST, DATASET_INSTANCES, DATASET_BAGS] {
        ctx.note_written(name);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Dataset directory written by `gen`; otherwise one is generated in memory.
    #[arg(long, value_name = "DIR", conflicts_with_all = ["task", "intrinsic_dim", "ambient_dim", "classes", "bags_per_class", "min_instances", "max_instances", "witness_rate", "noise", "cluster_radius", "offset_norm"])]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub synthetic: DataArgs,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DataSource {
    Directory { path: String },
    Synthetic { spec: SyntheticSpec, seed: u64 },
}

fn dataset(ctx: &Context, args: &DatasetArgs) -> CliResult<(Dataset, DataSource)> {
    if let Some(dir) = &args.data {
        debug_assert!(!args.synthetic.any_override());
        let ds = load_dataset(&resolve_input(dir)?)?;
        return Ok((ds, DataSource::Directory { path: dir.display().to_string() }));
    }
    let spec = args.synthetic.spec(&ctx.config.data)?;
    let ds = generate(&spec, ctx.seed)?;
    Ok((ds, DataSource::Synthetic { spec, seed: ctx.seed }))
}

// ---------------------------------------------------------------- training

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Attention hidden width (default 256).
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// MR correction rank (default 32).
    #[arg(long)]
    pub rank: Option<usize>,
    /// MR variant: full, minus_b, minus_bx, minus_lrp, anchor_trainable.
    #[arg(long)]
    pub variant: Option<String>,
}

impl ModelArgs {
    fn resolve(&self, sec: &ModelSection) -> CliResult<(usize, usize, Variant)> {
        let variant = match self.variant.as_deref().or(sec.variant.as_deref()) {
            Some(v) => parse_named::<Variant>(v)?,
            None => Variant::Full,
        };
        Ok((pick(self.hidden_dim, sec.hidden_dim, 256), pick(self.rank, sec.rank, 32), variant))
    }
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub start_factor: Option<f64>,
    #[arg(long)]
    pub end_factor: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub min_epochs: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

impl TrainFlags {
    fn resolve(&self, sec: &TrainSection, seed: u64) -> CliResult<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            lr: pick(self.lr, sec.lr, d.lr),
            weight_decay: pick(self.weight_decay, sec.weight_decay, d.weight_decay),
            start_factor: pick(self.start_factor, sec.start_factor, d.start_factor),
            end_factor: pick(self.end_factor, sec.end_factor, d.end_factor),
            patience: pick(self.patience, sec.patience, d.patience),
            min_epochs: pick(self.min_epochs, sec.min_epochs, d.min_epochs),
            max_epochs: pick(self.max_epochs, sec.max_epochs, d.max_epochs),
            dropout: pick(self.dropout, sec.dropout, d.dropout),
            seed,
        };
        cfg.validate().map_err(as_usage)?;
        Ok(cfg)
    }
}

fn split_spec(ctx: &Context) -> CliResult<SplitSpec> {
    let sec = &ctx.config.episode;
    let d = SplitSpec::default();
    let split = SplitSpec {
        train_fraction: sec.train_fraction.unwrap_or(d.train_fraction),
        val_fraction: sec.val_fraction.unwrap_or(d.val_fraction),
        test_fraction: sec.test_fraction.unwrap_or(d.test_fraction),
        split_seed: sec.split_seed.unwrap_or(d.split_seed),
    };
    split.validate().map_err(as_usage)?;
    Ok(split)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Training bags per class (default 8).
    #[arg(long)]
    pub k: Option<usize>,
    /// Attention projections: linear or mr (default mr).
    #[arg(long)]
    pub attention: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Serialize)]
struct EpisodeSizes {
    train: usize,
    val: usize,
    test: usize,
}

#[derive(Serialize)]
struct TrainReport {
    schema_version: u32,
    dataset: DataSource,
    k: usize,
    episode: EpisodeSizes,
    model: ModelSpec,
    trainable_params: usize,
    config: TrainConfig,
    history: TrainHistory,
    metrics: MetricReport,
    checkpoint: String,
    /// Trained V projection, usable as `tangent --transform`.
    attention_v: String,
}

pub fn train(ctx: &mut Context, args: TrainArgs) -> CliResult<()> {
    let (ds, source) = dataset(ctx, &args.dataset)?;
    let k = args.k.or_else(|| ctx.config.episode.k.as_ref().and_then(|ks| ks.first().copied())).unwrap_or(8);
    let (hidden_dim, rank, variant) = args.model.resolve(&ctx.config.model)?;
    let attention = match args.attention.as_deref().or(ctx.config.model.attention.as_deref()).unwrap_or("mr") {
        "linear" => AttentionKind::Linear,
        "mr" => AttentionKind::Mr { rank, variant },
        other => return Err(CliError::usage(format!("unknown attention '{other}' (expected linear or mr)"))),
    };
    let config = args.train.resolve(&ctx.config.train, ctx.seed)?;
    let episode_spec = EpisodeSpec { k, num_repeats: 1, split: split_spec(ctx)? };
    let spec = ModelSpec { input_dim: ds.input_dim(), hidden_dim, classes: ds.classes, dropout: config.dropout, attention };

    // same streams as one row of `compare`
    let mut episode_rng = RngStream::new(ctx.seed, stream_key("episode")).derive(k as u64);
    let episode = sample_episode(&ds, &episode_spec, &mut episode_rng).map_err(as_usage)?;
    let model0 = ABMILModel::new(&spec, &RngStream::new(ctx.seed, stream_key("model"))).map_err(as_usage)?;
    let params = model0.trainable_param_count();
    let (model, history) = mrgeo::harness::train_model(model0, &ds, &episode, &config)?;
    let test: Vec<&Bag> = episode.test.iter().map(|&i| &ds.bags[i]).collect();
    let metrics = evaluate(&model, &test)?;
    log::info!("test auc {:.4}, best epoch {} of {}", metrics.auc, history.best_epoch, history.epochs.len());

    save_checkpoint(&model, &ctx.out.join("checkpoint"))?;
    ctx.note_written(&format!("checkpoint/{CHECKPOINT_MANIFEST}"));
    ctx.note_written(&format!("checkpoint/{CHECKPOINT_BIN}"));
    let attention_v = match &model.attention.v {
        Projection::Linear(m) => {
            ctx.write_bytes("attention_v.bin", &bin_bytes(m)?)?;
            "attention_v.bin"
        }
        Projection::Mr(block) => {
            let mut buf = Vec::new();
            write_block(block, &mut buf)?;
            ctx.write_bytes("attention_v.mrbk", &buf)?;
            "attention_v.mrbk"
        }
    };
    let report = TrainReport {
        schema_version: SCHEMA_VERSION,
        dataset: source,
        k,
        episode: EpisodeSizes { train: episode.train.len(), val: episode.val.len(), test: episode.test.len() },
        model: spec,
        trainable_params: params,
        config,
        history,
        metrics: MetricReport::new(vec![SeedMetrics { seed: ctx.seed, metrics }], params),
        checkpoint: "checkpoint".into(),
        attention_v: attention_v.into(),
    };
    ctx.write_json("train.json", &report)
}

// ---------------------------------------------------------------- compare

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Training bags per class; several values run several shot counts (default 8).
    #[arg(long, num_args = 1..)]
    pub k: Vec<usize>,
    /// Number of paired runs; seeds count up from the global seed (default 5).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Skip the drift curves of the V projection.
    #[arg(long)]
    pub no_drift: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

fn drift_table(d: &DriftComparison) -> String {
    let mut out = String::from("curve,hop,mean_drift,std,pairs\n");
    for (name, curve) in [
        ("original", &d.original),
        ("abmil_before", &d.plain_before),
        ("abmil_after", &d.plain_after),
        ("mr_abmil_before", &d.mr_before),
        ("mr_abmil_after", &d.mr_after),
    ] {
        for b in &curve.buckets {
            out.push_str(&format!("{name},{},{},{},{}\n", b.hop, b.mean, b.std, b.pairs));
        }
    }
    out
}

pub fn compare(ctx: &mut Context, args: CompareArgs) -> CliResult<()> {
    let (ds, _) = dataset(ctx, &args.dataset)?;
    let shots = if !args.k.is_empty() { args.k.clone() } else { ctx.config.episode.k.clone().unwrap_or_else(|| vec![8]) };
    let n_seeds = pick(args.seeds, ctx.config.episode.seeds, 5);
    if n_seeds == 0 {
        return Err(CliError::usage("--seeds must be at least 1"));
    }
    let seeds: Vec<u64> = (0..n_seeds as u64)
        .map(|i| ctx.seed.checked_add(i).ok_or_else(|| CliError::usage("seed range overflows u64")))
        .collect::<CliResult<_>>()?;
    let (hidden_dim, mr_rank, mr_variant) = args.model.resolve(&ctx.config.model)?;
    let drift = (!args.no_drift).then(|| DriftSettings {
        config: drift_config(None, &ctx.config.tangent),
        max_points: ctx.config.tangent.max_points.unwrap_or(DriftSettings::default().max_points),
    });
    let config = ExperimentConfig {
        shots,
        seeds,
        split: split_spec(ctx)?,
        train: args.train.resolve(&ctx.config.train, ctx.seed)?,
        hidden_dim,
        mr_rank,
        mr_variant,
        drift,
    };
    config.validate().map_err(as_usage)?;
    let report = paired_experiment(&ds, &config)?;
    for shot in &report.shots {
        log::info!("k={}: abmil auc {:.4}, mr_abmil auc {:.4}", shot.k, shot.plain.mean.auc, shot.mr.mean.auc);
    }
    ctx.write_json("comparison.json", &report)?;
    ctx.write_bytes("comparison.csv", report.to_csv().as_bytes())?;
    for shot in &report.shots {
        if let Some(d) = &shot.drift {
            ctx.write_bytes(&format!("drift_k{}.csv", shot.k), drift_table(d).as_bytes())?;
        }
    }
    Ok(())
}
