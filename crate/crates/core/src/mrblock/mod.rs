//! The manifold residual block `f(X) = GELU(X·W2)·W1 + X·B`.
//!
//! `B` is a frozen random anchor (d0 × d1); the low-rank path `W2` (d0 × r),
//! `W1` (r × d1) starts at `W1 = 0` so a fresh block is exactly `X·B`.

mod approx;
mod format;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};
use crate::numerics::{Matrix, RngStream};
use crate::randproj::{init_matrix, InitScheme, InitSpec};

pub use approx::{approximate_target, approximate_with_rank, Approximation};
pub use format::{read_block, write_block, BLOCK_MAGIC, BLOCK_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `GELU(XW2)W1 + XB`
    Full,
    /// Identity residual: `GELU(XW2)W1 + X` (needs d0 = d1).
    MinusB,
    /// Low-rank path only: `GELU(XW2)W1`.
    MinusBX,
    /// Anchor only: `XB`.
    MinusLRP,
    /// Like `Full` but `B` is trained too.
    AnchorTrainable,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Full, Variant::MinusB, Variant::MinusBX, Variant::MinusLRP, Variant::AnchorTrainable];

    pub fn id(self) -> u8 {
        match self {
            Variant::Full => 0,
            Variant::MinusB => 1,
            Variant::MinusBX => 2,
            Variant::MinusLRP => 3,
            Variant::AnchorTrainable => 4,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Variant::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Validation(format!("unknown MR variant id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::MinusB => "minus_b",
            Variant::MinusBX => "minus_bx",
            Variant::MinusLRP => "minus_lrp",
            Variant::AnchorTrainable => "anchor_trainable",
        }
    }

    fn has_lrp(self) -> bool {
        self != Variant::MinusLRP
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::Validation(format!("unknown MR variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MRBlock {
    variant: Variant,
    anchor: Matrix,
    w2: Matrix,
    w1: Matrix,
}

/// Gradients of a scalar loss with respect to the block input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub dx: Matrix,
    pub dw2: Matrix,
    pub dw1: Matrix,
    /// Present only for [`Variant::AnchorTrainable`].
    pub db: Option<Matrix>,
}

/// Parameter gradients without the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub dw2: Matrix,
    pub dw1: Matrix,
    pub db: Option<Matrix>,
}

/// Intermediates of a forward pass reused by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    h: Matrix,
    g: Matrix,
}

fn check_rank(d0: usize, d1: usize, r: usize) -> Result<()> {
    if d0 == 0 || d1 == 0 {
        return invalid("block dimensions must be positive");
    }
    if r == 0 || r >= d0.min(d1) {
        return invalid(format!("rank r = {r} must satisfy 1 <= r < min(d0, d1) = {}", d0.min(d1)));
    }
    Ok(())
}

impl MRBlock {
    /// Anchor and `W2` Kaiming-uniform with `a = √5` (fan_in = d0), `W1 = 0`.
    pub fn new(d0: usize, d1: usize, r: usize, variant: Variant, rng: &mut RngStream) -> Result<Self> {
        check_rank(d0, d1, r)?;
        let anchor = if variant == Variant::MinusB {
            if d0 != d1 {
                return invalid(format!("variant minus_b needs d0 = d1, got {d0} and {d1}"));
            }
            Matrix::identity(d0)
        } else {
            init_matrix(&InitSpec::new(InitScheme::default(), d0, d1), rng)?
        };
        let w2 = init_matrix(&InitSpec::new(InitScheme::default(), d0, r), rng)?;
        Ok(Self { variant, anchor, w2, w1: Matrix::zeros(r, d1) })
    }

    pub fn from_parts(variant: Variant, anchor: Matrix, w2: Matrix, w1: Matrix) -> Result<Self> {
        let (d0, d1) = anchor.shape();
        let r = w2.cols();
        check_rank(d0, d1, r)?;
        if w2.rows() != d0 || w1.shape() != (r, d1) {
            return dim_err(format!(
                "factor shapes {:?} and {:?} do not fit anchor {:?}",
                w2.shape(),
                w1.shape(),
                anchor.shape()
            ));
        }
        if variant == Variant::MinusB && (d0 != d1 || anchor != Matrix::identity(d0)) {
            return invalid("variant minus_b needs a square identity anchor");
        }
        Ok(Self { variant, anchor, w2, w1 })
    }

    pub fn d0(&self) -> usize {
        self.anchor.rows()
    }

    pub fn d1(&self) -> usize {
        self.anchor.cols()
    }

    pub fn rank(&self) -> usize {
        self.w2.cols()
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn anchor(&self) -> &Matrix {
        &self.anchor
    }

    pub fn w2(&self) -> &Matrix {
        &self.w2
    }

    pub fn w1(&self) -> &Matrix {
        &self.w1
    }

    pub fn set_w1(&mut self, w1: Matrix) -> Result<()> {
        if w1.shape() != self.w1.shape() {
            return dim_err(format!("W1 must be {:?}, got {:?}", self.w1.shape(), w1.shape()));
        }
        self.w1 = w1;
        Ok(())
    }

    /// Trainable parameters in a fixed order: `W2`, `W1`, then `B` if trainable.
    pub fn trainable_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        if self.variant.has_lrp() {
            out.push(&mut self.w2);
            out.push(&mut self.w1);
        }
        if self.variant == Variant::AnchorTrainable {
            out.push(&mut self.anchor);
        }
        out
    }

    /// The dense map a fresh block reduces to, `B` (identity for `MinusB`, zero for `MinusBX`).
    pub fn effective_anchor(&self) -> Matrix {
        match self.variant {
            Variant::MinusBX => Matrix::zeros(self.d0(), self.d1()),
            _ => self.anchor.clone(),
        }
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, Option<ForwardCache>)> {
        if x.cols() != self.d0() {
            return dim_err(format!("input has {} columns, block expects d0 = {}", x.cols(), self.d0()));
        }
        let anchor_term = match self.variant {
            Variant::Full | Variant::AnchorTrainable | Variant::MinusLRP => Some(x.matmul(&self.anchor)?),
            Variant::MinusB => Some(x.clone()),
            Variant::MinusBX => None,
        };
        if !self.variant.has_lrp() {
            return Ok((anchor_term.expect("minus_lrp keeps the anchor"), None));
        }
        let h = x.matmul(&self.w2)?;
        let g = h.map(gelu_unchecked);
        let mut out = g.matmul(&self.w1)?;
        if let Some(a) = anchor_term {
            out.add_assign(&a)?;
        }
        Ok((out, Some(ForwardCache { h, g })))
    }

    /// Gradients given the cache from [`MRBlock::forward_cached`]; `dx` only when asked.
    pub(crate) fn backward_cached(
        &self,
        x: &Matrix,
        dy: &Matrix,
        cache: Option<&ForwardCache>,
        need_dx: bool,
    ) -> Result<(Option<Matrix>, ParamGrads)> {
        if dy.shape() != (x.rows(), self.d1()) {
            return dim_err(format!("dY must be {:?}, got {:?}", (x.rows(), self.d1()), dy.shape()));
        }
        let db = (self.variant == Variant::AnchorTrainable).then(|| x.tr_matmul(dy)).transpose()?;
        let (dw2, dw1, lrp_dx) = match cache {
            Some(c) if self.variant.has_lrp() => {
                let dw1 = c.g.tr_matmul(dy)?;
                let mut d = dy.matmul_tr(&self.w1)?;
                d.as_mut_slice().iter_mut().zip(c.h.as_slice()).for_each(|(p, &h)| *p *= gelu_prime_unchecked(h));
                let dw2 = x.tr_matmul(&d)?;
                let dx = if need_dx { Some(d.matmul_tr(&self.w2)?) } else { None };
                (dw2, dw1, dx)
            }
            _ => (Matrix::zeros(self.d0(), self.rank()), Matrix::zeros(self.rank(), self.d1()), None),
        };
        let dx = if need_dx {
            let anchor_dx = match self.variant {
                Variant::Full | Variant::AnchorTrainable | Variant::MinusLRP => Some(dy.matmul_tr(&self.anchor)?),
                Variant::MinusB => Some(dy.clone()),
                Variant::MinusBX => None,
            };
            Some(match (lrp_dx, anchor_dx) {
                (Some(mut a), Some(b)) => {
                    a.add_assign(&b)?;
                    a
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => Matrix::zeros(x.rows(), self.d0()),
            })
        } else {
            None
        };
        Ok((dx, ParamGrads { dw2, dw1, db }))
    }
}

/// Standard normal CDF, `Φ(x) = erfc(−x/√2)/2`.
fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn gelu_unchecked(x: f64) -> f64 {
    x * phi_cdf(x)
}

fn gelu_prime_unchecked(x: f64) -> f64 {
    phi_cdf(x) + x * phi_pdf(x)
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return invalid(format!("gelu input {x} is not finite"));
    }
    Ok(gelu_unchecked(x))
}

/// `Φ(x) + x·φ(x)`.
pub fn gelu_prime(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return invalid(format!("gelu_prime input {x} is not finite"));
    }
    Ok(gelu_prime_unchecked(x))
}

pub fn mr_forward(block: &MRBlock, x: &Matrix) -> Result<Matrix> {
    Ok(block.forward_cached(x)?.0)
}

pub fn mr_backward(block: &MRBlock, x: &Matrix, dy: &Matrix) -> Result<GradientBundle> {
    let (_, cache) = block.forward_cached(x)?;
    let (dx, g) = block.backward_cached(x, dy, cache.as_ref(), true)?;
    Ok(GradientBundle { dx: dx.expect("requested"), dw2: g.dw2, dw1: g.dw1, db: g.db })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub count: usize,
    /// `d0·d1`, the size of the dense layer the block replaces.
    pub vanilla: usize,
    /// `r(d0+d1)/(d0·d1)`
    pub reduction_ratio: f64,
    /// The rank at which the low-rank path matches the dense layer, `d0·d1/(d0+d1)`.
    pub threshold: f64,
    pub exceeds_vanilla: bool,
}

pub fn trainable_param_count(block: &MRBlock) -> ParamCount {
    param_count(block.d0(), block.d1(), block.rank(), block.variant())
}

/// Parameter accounting without building a block.
pub fn param_count(d0: usize, d1: usize, r: usize, variant: Variant) -> ParamCount {
    let lrp = r * (d0 + d1);
    let vanilla = d0 * d1;
    let count = match variant {
        Variant::MinusLRP => 0,
        Variant::AnchorTrainable => lrp + vanilla,
        _ => lrp,
    };
    let reduction_ratio = lrp as f64 / vanilla as f64;
    ParamCount {
        count,
        vanilla,
        reduction_ratio,
        threshold: vanilla as f64 / (d0 + d1) as f64,
        exceeds_vanilla: reduction_ratio >= 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    fn trained_block(variant: Variant, seed: u64) -> (MRBlock, Matrix) {
        let mut rng = RngStream::new(seed, 0);
        let (d0, d1) = if variant == Variant::MinusB { (6, 6) } else { (6, 5) };
        let mut b = MRBlock::new(d0, d1, 2, variant, &mut rng).unwrap();
        b.set_w1(random(2, d1, &mut rng)).unwrap();
        let x = random(3, d0, &mut rng);
        (b, x)
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0).unwrap(), 0.0);
        for x in [-3.0, -0.7, 0.1, 1.0, 2.5, 8.0] {
            // x·Φ(x) − (−x)·Φ(−x) = x·(Φ(x) + Φ(−x)) = x
            let diff = gelu(x).unwrap() - gelu(-x).unwrap();
            assert!((diff - x).abs() <= 4.0 * f64::EPSILON * x.abs(), "{x}: {diff}");
        }
        // x·Φ(x) at x = 1 with Φ(1) = 0.8413447460685429
        assert!((gelu(1.0).unwrap() - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!(gelu(f64::NAN).is_err());
        assert!(gelu_prime(f64::INFINITY).is_err());
    }

    #[test]
    fn gelu_prime_matches_finite_difference() {
        let h = 1e-6;
        for x in [-2.0, -0.3, 0.0, 1.0, 3.0] {
            let fd = (gelu(x + h).unwrap() - gelu(x - h).unwrap()) / (2.0 * h);
            assert!((gelu_prime(x).unwrap() - fd).abs() < 1e-7, "{x}");
        }
    }

    #[test]
    fn fresh_block_is_the_anchor_map() {
        let mut rng = RngStream::new(1, 0);
        let b = MRBlock::new(12, 9, 3, Variant::Full, &mut rng).unwrap();
        let x = random(7, 12, &mut rng);
        assert_eq!(mr_forward(&b, &x).unwrap(), x.matmul(b.anchor()).unwrap());
        let bound = 1.0 / 12f64.sqrt();
        assert!(b.anchor().max_abs() <= bound && b.w2().max_abs() <= bound);
        assert_eq!(b.w1().max_abs(), 0.0);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        for v in Variant::ALL {
            let (b, x) = trained_block(v, 2);
            let z = Matrix::zeros(x.rows(), x.cols());
            assert_eq!(mr_forward(&b, &z).unwrap().max_abs(), 0.0, "{v}");
        }
    }

    #[test]
    fn decomposition_oracle() {
        let (b, x) = trained_block(Variant::Full, 3);
        let g = Matrix::from_fn(x.rows(), 2, |i, j| {
            let h: f64 = (0..6).map(|k| x[(i, k)] * b.w2()[(k, j)]).sum();
            h * 0.5 * (1.0 + libm::erf(h / 2f64.sqrt()))
        });
        let expected = g.matmul(b.w1()).unwrap().add(&x.matmul(b.anchor()).unwrap()).unwrap();
        assert!(mr_forward(&b, &x).unwrap().sub(&expected).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn variant_outputs() {
        let (b, x) = trained_block(Variant::MinusB, 4);
        let lrp = x.matmul(b.w2()).unwrap().map(gelu_unchecked).matmul(b.w1()).unwrap();
        assert_eq!(mr_forward(&b, &x).unwrap(), lrp.add(&x).unwrap());

        let (b, x) = trained_block(Variant::MinusBX, 4);
        let lrp = x.matmul(b.w2()).unwrap().map(gelu_unchecked).matmul(b.w1()).unwrap();
        assert_eq!(mr_forward(&b, &x).unwrap(), lrp);

        let (b, x) = trained_block(Variant::MinusLRP, 4);
        assert_eq!(mr_forward(&b, &x).unwrap(), x.matmul(b.anchor()).unwrap());
    }

    #[test]
    fn constructor_checks() {
        let mut rng = RngStream::new(0, 0);
        assert!(MRBlock::new(8, 6, 6, Variant::Full, &mut rng).is_err());
        assert!(MRBlock::new(8, 6, 0, Variant::Full, &mut rng).is_err());
        assert!(MRBlock::new(8, 6, 2, Variant::MinusB, &mut rng).is_err());
        let b = MRBlock::new(6, 6, 2, Variant::MinusB, &mut rng).unwrap();
        assert_eq!(b.anchor(), &Matrix::identity(6));
        let x = Matrix::zeros(2, 5);
        assert!(mr_forward(&b, &x).is_err());
    }

    #[test]
    fn zero_w1_backward() {
        let mut rng = RngStream::new(5, 0);
        let b = MRBlock::new(6, 5, 2, Variant::Full, &mut rng).unwrap();
        let x = random(3, 6, &mut rng);
        let dy = random(3, 5, &mut rng);
        let g = mr_backward(&b, &x, &dy).unwrap();
        assert_eq!(g.dx, dy.matmul_tr(b.anchor()).unwrap());
        let gx = x.matmul(b.w2()).unwrap().map(gelu_unchecked);
        assert!(g.dw1.sub(&gx.tr_matmul(&dy).unwrap()).unwrap().max_abs() < 1e-14);
        assert!(g.db.is_none());
        assert_eq!(g.dw2.max_abs(), 0.0);
    }

    #[test]
    fn minus_lrp_has_no_lrp_gradient() {
        let (b, x) = trained_block(Variant::MinusLRP, 6);
        let dy = Matrix::from_fn(3, 5, |i, j| (i + j) as f64);
        let g = mr_backward(&b, &x, &dy).unwrap();
        assert_eq!(g.dw1.max_abs(), 0.0);
        assert_eq!(g.dw2.max_abs(), 0.0);
        assert_eq!(g.dw2.shape(), (6, 2));
    }

    /// Central differences of L = ½‖f(X)‖² over every input and parameter entry.
    #[test]
    fn gradients_match_finite_differences() {
        let loss = |b: &MRBlock, x: &Matrix| 0.5 * mr_forward(b, x).unwrap().frobenius_norm().powi(2);
        let h = 1e-5;
        for v in Variant::ALL {
            for seed in 0..4 {
                let (b, x) = trained_block(v, 100 + seed);
                let y = mr_forward(&b, &x).unwrap();
                let g = mr_backward(&b, &x, &y).unwrap();
                assert_eq!(g.db.is_some(), v == Variant::AnchorTrainable);

                let check = |analytic: &Matrix, perturb: &dyn Fn(usize, f64) -> f64| {
                    for idx in 0..analytic.as_slice().len() {
                        let fd = (perturb(idx, h) - perturb(idx, -h)) / (2.0 * h);
                        let a = analytic.as_slice()[idx];
                        let denom = a.abs().max(fd.abs()).max(1e-3);
                        assert!((a - fd).abs() / denom < 1e-5, "{v} seed {seed}: {a} vs {fd}");
                    }
                };
                check(&g.dx, &|i, e| {
                    let mut xp = x.clone();
                    xp.as_mut_slice()[i] += e;
                    loss(&b, &xp)
                });
                if v.has_lrp() {
                    check(&g.dw2, &|i, e| {
                        let mut bp = b.clone();
                        bp.w2.as_mut_slice()[i] += e;
                        loss(&bp, &x)
                    });
                    check(&g.dw1, &|i, e| {
                        let mut bp = b.clone();
                        bp.w1.as_mut_slice()[i] += e;
                        loss(&bp, &x)
                    });
                }
                if let Some(db) = &g.db {
                    check(db, &|i, e| {
                        let mut bp = b.clone();
                        bp.anchor.as_mut_slice()[i] += e;
                        loss(&bp, &x)
                    });
                }
            }
        }
    }

    #[test]
    fn parameter_accounting() {
        let c = param_count(512, 256, 64, Variant::Full);
        assert_eq!(c.count, 49_152);
        assert_eq!(c.vanilla, 131_072);
        assert!((c.threshold - 170.666_666_666_666_67).abs() < 1e-9);
        assert!(!c.exceeds_vanilla);
        assert!(!param_count(512, 256, 170, Variant::Full).exceeds_vanilla);
        assert!(param_count(512, 256, 171, Variant::Full).exceeds_vanilla);
        assert_eq!(param_count(512, 256, 64, Variant::AnchorTrainable).count, 49_152 + 131_072);
        assert_eq!(param_count(512, 256, 64, Variant::MinusLRP).count, 0);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_id(v.id()).unwrap(), v);
        }
        assert!(Variant::from_id(5).is_err());
        assert!("minus_c".parse::<Variant>().is_err());
    }
}
