//! Synthetic MIL data on curved manifolds.
//!
//! Instances live on an m-dimensional manifold in R^(m+1) (plane, sphere or
//! swirl), are embedded in R^D by a random orthonormal map, optionally pushed
//! away from the origin along a further orthogonal direction, and perturbed
//! by isotropic noise. Each class owns a cluster on the manifold; a bag of
//! class c mixes instances from that cluster ("witnesses") with instances
//! drawn uniformly over the manifold.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Error, Result};
use crate::mil::Bag;
use crate::numerics::{norm, orthonormalize_columns, stream_key, Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manifold {
    FlatPlane,
    Sphere,
    Swirl,
}

impl Manifold {
    pub fn name(self) -> &'static str {
        match self {
            Manifold::FlatPlane => "flat_plane",
            Manifold::Sphere => "sphere",
            Manifold::Swirl => "swirl",
        }
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Manifold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat_plane" | "plane" => Ok(Manifold::FlatPlane),
            "sphere" => Ok(Manifold::Sphere),
            "swirl" => Ok(Manifold::Swirl),
            _ => invalid(format!("unknown manifold '{s}' (expected flat_plane, sphere or swirl)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub manifold: Manifold,
    pub intrinsic_dim: usize,
    pub ambient_dim: usize,
    pub classes: usize,
    pub bags_per_class: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Fraction of each bag drawn from its class cluster.
    pub witness_rate: f64,
    /// Expected norm of the isotropic noise vector added to each instance.
    pub noise: f64,
    /// Spread of a class cluster in manifold coordinates.
    pub cluster_radius: f64,
    /// Distance of the manifold from the origin along a direction orthogonal to it.
    pub offset_norm: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::reference(Manifold::Sphere)
    }
}

impl SyntheticSpec {
    /// Three classes in R^512, intrinsic dimension 2, 60 bags per class of
    /// 30 to 80 instances, witness rate 0.3, noise 0.05.
    ///
    /// The plane sits at distance 10 from the origin so that row normalization
    /// does not fold it. Normalization also shrinks it tenfold relative to
    /// its noise, so its noise is lowered to 0.01; at 0.05 the noise alone
    /// puts hop-1 drift near 0.06.
    pub fn reference(manifold: Manifold) -> Self {
        let plane = manifold == Manifold::FlatPlane;
        Self {
            manifold,
            intrinsic_dim: 2,
            ambient_dim: 512,
            classes: 3,
            bags_per_class: 60,
            min_instances: 30,
            max_instances: 80,
            witness_rate: 0.3,
            noise: if plane { 0.01 } else { 0.05 },
            cluster_radius: 0.3,
            offset_norm: if plane { 10.0 } else { 0.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.intrinsic_dim == 0 {
            return invalid("intrinsic dimension must be at least 1");
        }
        // m+1 coordinates for the manifold plus one for the offset direction
        if self.intrinsic_dim + 2 > self.ambient_dim {
            return invalid(format!(
                "intrinsic dimension {} needs ambient dimension at least {}, got {}",
                self.intrinsic_dim,
                self.intrinsic_dim + 2,
                self.ambient_dim
            ));
        }
        if self.classes < 2 || self.bags_per_class == 0 {
            return invalid("need at least 2 classes and 1 bag per class");
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return invalid(format!("instance range {}..={} is empty", self.min_instances, self.max_instances));
        }
        if !(self.witness_rate > 0.0 && self.witness_rate <= 1.0) {
            return invalid(format!("witness rate must be in (0, 1], got {}", self.witness_rate));
        }
        for (name, v) in [("noise", self.noise), ("offset_norm", self.offset_norm)] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.cluster_radius > 0.0 && self.cluster_radius.is_finite()) {
            return invalid(format!("cluster radius must be positive, got {}", self.cluster_radius));
        }
        Ok(())
    }

    fn param_dim(&self) -> usize {
        match self.manifold {
            Manifold::Sphere => self.intrinsic_dim + 1,
            _ => self.intrinsic_dim,
        }
    }

    fn uniform_param(&self, rng: &mut RngStream) -> Vec<f64> {
        match self.manifold {
            Manifold::Sphere => loop {
                let g: Vec<f64> = (0..self.param_dim()).map(|_| rng.normal()).collect();
                let n = norm(&g);
                if n > 1e-12 {
                    break g.iter().map(|x| x / n).collect();
                }
            },
            _ => (0..self.param_dim()).map(|_| 2.0 * rng.next_f64() - 1.0).collect(),
        }
    }

    fn cluster_param(&self, center: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let p: Vec<f64> = center.iter().map(|c| c + self.cluster_radius * rng.normal()).collect();
        match self.manifold {
            Manifold::Sphere => {
                let n = norm(&p);
                p.iter().map(|x| x / n).collect()
            }
            _ => p,
        }
    }

    /// Manifold coordinates in R^(m+1).
    fn latent(&self, param: &[f64]) -> Vec<f64> {
        let m = self.intrinsic_dim;
        match self.manifold {
            Manifold::Sphere => param.to_vec(),
            Manifold::FlatPlane => {
                let mut x = param.to_vec();
                x.push(0.0);
                x
            }
            Manifold::Swirl => {
                let t = PI * (2.5 + 1.5 * param[0]);
                let mut x = vec![t * t.cos() / (4.0 * PI), t * t.sin() / (4.0 * PI)];
                x.extend_from_slice(&param[1..m]);
                x
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    /// Embedded class-cluster centers, one row per class.
    pub centers: Matrix,
    /// Witness count of each bag.
    pub witnesses: Vec<usize>,
}

struct Embedding {
    basis: Matrix,
    spec: SyntheticSpec,
}

impl Embedding {
    fn new(spec: &SyntheticSpec, rng: &mut RngStream) -> Result<Self> {
        let d = spec.ambient_dim;
        let g = Matrix::from_fn(d, spec.intrinsic_dim + 2, |_, _| rng.normal());
        Ok(Self { basis: orthonormalize_columns(&g)?, spec: spec.clone() })
    }

    fn embed(&self, latent: &[f64], out: &mut [f64], rng: Option<&mut RngStream>) {
        let m1 = latent.len();
        let noise_sd = self.spec.noise / (self.spec.ambient_dim as f64).sqrt();
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.basis.row(i);
            let mut x = self.spec.offset_norm * row[m1];
            for j in 0..m1 {
                x += row[j] * latent[j];
            }
            *o = x;
        }
        if let Some(rng) = rng {
            if noise_sd > 0.0 {
                out.iter_mut().for_each(|o| *o += noise_sd * rng.normal());
            }
        }
    }
}

/// Farthest-point selection of `count` class centers from a fixed candidate pool.
fn class_centers(spec: &SyntheticSpec, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let candidates: Vec<Vec<f64>> = (0..32 * spec.classes).map(|_| spec.uniform_param(rng)).collect();
    let latent: Vec<Vec<f64>> = candidates.iter().map(|p| spec.latent(p)).collect();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut chosen = vec![0];
    let mut nearest: Vec<f64> = latent.iter().map(|l| dist2(l, &latent[0])).collect();
    while chosen.len() < spec.classes {
        let next = (0..latent.len()).fold(0, |best, i| if nearest[i] > nearest[best] { i } else { best });
        chosen.push(next);
        for i in 0..latent.len() {
            nearest[i] = nearest[i].min(dist2(&latent[i], &latent[next]));
        }
    }
    chosen.into_iter().map(|i| candidates[i].clone()).collect()
}

pub fn gen_synthetic(spec: &SyntheticSpec, rng: &RngStream) -> Result<GeneratedDataset> {
    spec.validate()?;
    let d = spec.ambient_dim;
    let embedding = Embedding::new(spec, &mut rng.derive(stream_key("embedding")))?;
    let centers = class_centers(spec, &mut rng.derive(stream_key("centers")));
    let mut center_rows = Matrix::zeros(spec.classes, d);
    for (c, p) in centers.iter().enumerate() {
        embedding.embed(&spec.latent(p), center_rows.row_mut(c), None);
    }

    let bag_root = rng.derive(stream_key("bags"));
    let mut bags = Vec::with_capacity(spec.classes * spec.bags_per_class);
    let mut witnesses = Vec::with_capacity(bags.capacity());
    for b in 0..spec.bags_per_class {
        for (label, center) in centers.iter().enumerate() {
            let mut r = bag_root.derive((b * spec.classes + label) as u64);
            let n = spec.min_instances + r.index(spec.max_instances - spec.min_instances + 1);
            let n_w = ((spec.witness_rate * n as f64).round() as usize).clamp(1, n);
            let mut is_witness: Vec<bool> = (0..n).map(|i| i < n_w).collect();
            r.shuffle(&mut is_witness);
            let mut inst = Matrix::zeros(n, d);
            for (i, &w) in is_witness.iter().enumerate() {
                let param = if w { spec.cluster_param(center, &mut r) } else { spec.uniform_param(&mut r) };
                embedding.embed(&spec.latent(&param), inst.row_mut(i), Some(&mut r));
            }
            bags.push(Bag::new(inst, label));
            witnesses.push(n_w);
        }
    }
    Ok(GeneratedDataset { dataset: Dataset::new(bags, spec.classes)?, centers: center_rows, witnesses })
}
