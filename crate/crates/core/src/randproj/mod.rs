//! Random initializers and Monte-Carlo checks of what a random linear map
//! preserves.
//!
//! Projections act on row vectors: an input `u ∈ R^{d0}` maps to `Mᵀu ∈ R^{d1}`
//! for `M` of shape d0 × d1, matching `X·B` in the MR block.

mod checks;
mod structure;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{Matrix, RngStream};

pub use checks::{
    product_rank, verify_cosine, verify_full_rank, verify_inner_product, verify_pairwise_distances,
    verify_rank_product, verify_variance_scaling, CheckConfig, GUARD_CONSTANT,
};
pub use structure::{verify_structure_preservation, StructureProperty, MAX_RIP_DIM, MAX_RIP_SPARSITY};

/// √5, the default negative slope for Kaiming-uniform anchors.
pub const KAIMING_A: f64 = 2.236_067_977_499_789_7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitScheme {
    KaimingUniform { a: f64 },
    KaimingNormal { a: f64 },
    XavierUniform { gain: f64 },
    XavierNormal { gain: f64 },
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::KaimingUniform { a: KAIMING_A }
    }
}

impl InitScheme {
    /// Variance of a single entry for the given fans.
    pub fn entry_variance(&self, fan_in: usize, fan_out: usize) -> f64 {
        let (fi, fo) = (fan_in as f64, fan_out as f64);
        match *self {
            InitScheme::KaimingUniform { a } | InitScheme::KaimingNormal { a } => 2.0 / ((1.0 + a * a) * fi),
            InitScheme::XavierUniform { gain } | InitScheme::XavierNormal { gain } => gain * gain * 2.0 / (fi + fo),
        }
    }

    /// Half-width of the uniform schemes; `None` for the normal ones.
    pub fn uniform_bound(&self, fan_in: usize, fan_out: usize) -> Option<f64> {
        match self {
            InitScheme::KaimingUniform { .. } | InitScheme::XavierUniform { .. } => {
                Some((3.0 * self.entry_variance(fan_in, fan_out)).sqrt())
            }
            _ => None,
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitScheme::KaimingUniform { a } => write!(f, "kaiming_uniform({a})"),
            InitScheme::KaimingNormal { a } => write!(f, "kaiming_normal({a})"),
            InitScheme::XavierUniform { gain } => write!(f, "xavier_uniform({gain})"),
            InitScheme::XavierNormal { gain } => write!(f, "xavier_normal({gain})"),
        }
    }
}

/// Parses `name` or `name(param)`, e.g. `kaiming_uniform`, `xavier_normal(2.0)`.
impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, param) = match s.split_once('(') {
            Some((name, rest)) => {
                let Some(inner) = rest.strip_suffix(')') else {
                    return invalid(format!("malformed init scheme '{s}'"));
                };
                let value: f64 = inner
                    .trim()
                    .parse()
                    .map_err(|_| Error::Validation(format!("bad parameter in init scheme '{s}'")))?;
                (name.trim(), Some(value))
            }
            None => (s, None),
        };
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "kaiming_uniform" => Ok(InitScheme::KaimingUniform { a: param.unwrap_or(KAIMING_A) }),
            "kaiming_normal" => Ok(InitScheme::KaimingNormal { a: param.unwrap_or(0.0) }),
            "xavier_uniform" => Ok(InitScheme::XavierUniform { gain: param.unwrap_or(1.0) }),
            "xavier_normal" => Ok(InitScheme::XavierNormal { gain: param.unwrap_or(1.0) }),
            _ => invalid(format!(
                "unknown init scheme '{name}' (expected kaiming_uniform, kaiming_normal, xavier_uniform or xavier_normal)"
            )),
        }
    }
}

/// A d0 × d1 matrix to initialize; `fan_in = d0`, `fan_out = d1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl InitSpec {
    pub fn new(scheme: InitScheme, fan_in: usize, fan_out: usize) -> Self {
        Self { scheme, fan_in, fan_out }
    }

    pub fn entry_variance(&self) -> f64 {
        self.scheme.entry_variance(self.fan_in, self.fan_out)
    }
}

/// Draw an i.i.d. matrix of shape `fan_in × fan_out`.
pub fn init_matrix(spec: &InitSpec, rng: &mut RngStream) -> Result<Matrix> {
    if spec.fan_in == 0 || spec.fan_out == 0 {
        return invalid(format!("init dimensions must be positive, got {}x{}", spec.fan_in, spec.fan_out));
    }
    let var = spec.entry_variance();
    if !(var.is_finite() && var > 0.0) {
        return invalid(format!("init scheme {} has no finite positive variance", spec.scheme));
    }
    let m = match spec.scheme.uniform_bound(spec.fan_in, spec.fan_out) {
        Some(b) => Matrix::from_fn(spec.fan_in, spec.fan_out, |_, _| (2.0 * rng.next_f64() - 1.0) * b),
        None => {
            let sd = var.sqrt();
            Matrix::from_fn(spec.fan_in, spec.fan_out, |_, _| sd * rng.normal())
        }
    };
    Ok(m)
}

/// How a report's `pass` flag was decided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Tolerance {
    /// `|empirical − theoretical| ≤ value·|theoretical|`
    Relative(f64),
    /// `|empirical − theoretical| ≤ value`
    Absolute(f64),
    /// `|empirical − theoretical| ≤ value·SE` with SE the Monte-Carlo standard error.
    StandardErrors(f64),
    /// `empirical ≤ theoretical`
    UpperBound,
    /// `empirical == theoretical`
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub theoretical: f64,
    pub empirical: f64,
    pub trials: usize,
    pub tolerance: Tolerance,
    pub pass: bool,
    pub details: BTreeMap<String, f64>,
    pub flags: Vec<String>,
}

impl PropertyReport {
    pub(crate) fn new(property: &str, theoretical: f64, empirical: f64, trials: usize, tolerance: Tolerance) -> Self {
        Self {
            property: property.to_string(),
            theoretical,
            empirical,
            trials,
            tolerance,
            pass: false,
            details: BTreeMap::new(),
            flags: Vec::new(),
        }
    }

    /// Set `pass` from the tolerance; `se` is only consulted for `StandardErrors`.
    pub(crate) fn judge(mut self, se: f64) -> Self {
        let diff = (self.empirical - self.theoretical).abs();
        self.pass = match self.tolerance {
            Tolerance::Relative(t) => diff <= t * self.theoretical.abs(),
            Tolerance::Absolute(t) => diff <= t,
            Tolerance::StandardErrors(k) => diff <= k * se,
            Tolerance::UpperBound => self.empirical <= self.theoretical,
            Tolerance::Exact => self.empirical == self.theoretical,
        };
        self
    }

    pub(crate) fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn relative_error(&self) -> f64 {
        (self.empirical - self.theoretical).abs() / self.theoretical.abs()
    }
}
