//! Gated-attention multiple-instance learning.
//!
//! Scores `s_k = wᵀ(tanh(V(h_k)) ⊙ σ(U(h_k)))`, weights `a = softmax(s)`, bag
//! feature `z = Σ a_k h_k`, logits `W_cᵀz + b`. `V` and `U` are either plain
//! d_p × d_h matrices (no bias) or MR blocks.

mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::mrblock::{ForwardCache, MRBlock, ParamGrads, Variant};
use crate::numerics::{dot, stream_key, Matrix, RngStream};
use crate::randproj::{init_matrix, InitScheme, InitSpec};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_BIN, CHECKPOINT_MANIFEST};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub instances: Matrix,
    pub label: usize,
}

impl Bag {
    pub fn new(instances: Matrix, label: usize) -> Self {
        Self { instances, label }
    }

    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Linear(Matrix),
    Mr(MRBlock),
}

impl Projection {
    pub fn input_dim(&self) -> usize {
        match self {
            Projection::Linear(m) => m.rows(),
            Projection::Mr(b) => b.d0(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Projection::Linear(m) => m.cols(),
            Projection::Mr(b) => b.d1(),
        }
    }

    /// The dense map this projection equals when the low-rank path is zero.
    pub fn linear_part(&self) -> Matrix {
        match self {
            Projection::Linear(m) => m.clone(),
            Projection::Mr(b) => b.effective_anchor(),
        }
    }

    /// Map instance rows through the projection (`H·A` or `f_MR(H)`).
    pub fn apply(&self, h: &Matrix) -> Result<Matrix> {
        if h.cols() != self.input_dim() {
            return dim_err(format!("input has {} columns, projection expects {}", h.cols(), self.input_dim()));
        }
        Ok(self.forward(h)?.0)
    }

    fn forward(&self, h: &Matrix) -> Result<(Matrix, Option<ForwardCache>)> {
        match self {
            Projection::Linear(m) => Ok((h.matmul(m)?, None)),
            Projection::Mr(b) => b.forward_cached(h),
        }
    }

    fn backward(&self, h: &Matrix, dy: &Matrix, cache: Option<&ForwardCache>) -> Result<ProjectionGrad> {
        match self {
            Projection::Linear(_) => Ok(ProjectionGrad::Linear(h.tr_matmul(dy)?)),
            Projection::Mr(b) => Ok(ProjectionGrad::Mr(b.backward_cached(h, dy, cache, false)?.1)),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Projection::Linear(m) => vec![m],
            Projection::Mr(b) => b.trainable_mut(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionGrad {
    Linear(Matrix),
    Mr(ParamGrads),
}

impl ProjectionGrad {
    fn slices(&self) -> Vec<&[f64]> {
        match self {
            ProjectionGrad::Linear(m) => vec![m.as_slice()],
            ProjectionGrad::Mr(g) => {
                let mut out = vec![g.dw2.as_slice(), g.dw1.as_slice()];
                if let Some(db) = &g.db {
                    out.push(db.as_slice());
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub v: Projection,
    pub u: Projection,
    pub w: Vec<f64>,
}

impl AttentionLayer {
    pub fn hidden_dim(&self) -> usize {
        self.w.len()
    }

    fn validate(&self) -> Result<()> {
        let d_h = self.w.len();
        if self.v.output_dim() != d_h || self.u.output_dim() != d_h || self.v.input_dim() != self.u.input_dim() {
            return dim_err(format!(
                "attention projections {}→{} and {}→{} do not match w of length {d_h}",
                self.v.input_dim(),
                self.v.output_dim(),
                self.u.input_dim(),
                self.u.output_dim()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ABMILModel {
    pub attention: AttentionLayer,
    /// d_p × C
    pub classifier_w: Matrix,
    pub classifier_b: Vec<f64>,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionOutput {
    pub weights: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub logits: Vec<f64>,
    pub attention: AttentionOutput,
}

/// Which attention projections a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttentionKind {
    Linear,
    Mr { rank: usize, variant: Variant },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub dropout: f64,
    pub attention: AttentionKind,
}

impl ABMILModel {
    /// Initialize from named sub-streams of `rng`, so the V/U weights of a linear
    /// model coincide with the anchors of an MR model built from the same stream.
    pub fn new(spec: &ModelSpec, rng: &RngStream) -> Result<Self> {
        let ModelSpec { input_dim: d_p, hidden_dim: d_h, classes, dropout, attention } = *spec;
        if classes < 2 {
            return invalid(format!("need at least 2 classes, got {classes}"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return invalid(format!("dropout must be in [0, 1), got {dropout}"));
        }
        let ku = InitScheme::default();
        let proj = |name: &str| -> Result<Projection> {
            let mut r = rng.derive(stream_key(name));
            match attention {
                AttentionKind::Linear => Ok(Projection::Linear(init_matrix(&InitSpec::new(ku, d_p, d_h), &mut r)?)),
                AttentionKind::Mr { rank, variant } => Ok(Projection::Mr(MRBlock::new(d_p, d_h, rank, variant, &mut r)?)),
            }
        };
        let v = proj("attention.v")?;
        let u = proj("attention.u")?;
        let w = init_matrix(&InitSpec::new(ku, d_h, 1), &mut rng.derive(stream_key("attention.w")))?.into_vec();
        let mut rc = rng.derive(stream_key("classifier"));
        let classifier_w = init_matrix(&InitSpec::new(ku, d_p, classes), &mut rc)?;
        let bound = 1.0 / (d_p as f64).sqrt();
        let classifier_b = rc.uniform(-bound, bound, classes)?;
        Ok(Self { attention: AttentionLayer { v, u, w }, classifier_w, classifier_b, dropout })
    }

    pub fn input_dim(&self) -> usize {
        self.classifier_w.rows()
    }

    pub fn spec(&self) -> ModelSpec {
        let attention = match &self.attention.v {
            Projection::Linear(_) => AttentionKind::Linear,
            Projection::Mr(b) => AttentionKind::Mr { rank: b.rank(), variant: b.variant() },
        };
        ModelSpec {
            input_dim: self.input_dim(),
            hidden_dim: self.attention.hidden_dim(),
            classes: self.classes(),
            dropout: self.dropout,
            attention,
        }
    }

    pub fn classes(&self) -> usize {
        self.classifier_w.cols()
    }

    /// Copy with every MR projection replaced by its dense anchor map.
    pub fn anchor_equivalent(&self) -> Self {
        let lin = |p: &Projection| Projection::Linear(p.linear_part());
        Self {
            attention: AttentionLayer {
                v: lin(&self.attention.v),
                u: lin(&self.attention.u),
                w: self.attention.w.clone(),
            },
            ..self.clone()
        }
    }

    /// Trainable tensors in a fixed order; frozen anchors are not included.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for m in self.attention.v.params_mut() {
            out.push(m.as_mut_slice());
        }
        for m in self.attention.u.params_mut() {
            out.push(m.as_mut_slice());
        }
        out.push(&mut self.attention.w);
        out.push(self.classifier_w.as_mut_slice());
        out.push(&mut self.classifier_b);
        out
    }

    pub fn trainable_param_count(&self) -> usize {
        self.clone().params_mut().iter().map(|p| p.len()).sum()
    }

    fn validate(&self, bag: &Bag) -> Result<()> {
        self.attention.validate()?;
        if bag.is_empty() {
            return invalid("bag has no instances");
        }
        if bag.instances.cols() != self.input_dim() || self.attention.v.input_dim() != self.input_dim() {
            return dim_err(format!(
                "bag features have {} columns, model expects {}",
                bag.instances.cols(),
                self.input_dim()
            ));
        }
        if self.classifier_b.len() != self.classes() {
            return dim_err("classifier bias length differs from class count");
        }
        Ok(())
    }
}

/// Gradients in the order of [`ABMILModel::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub v: ProjectionGrad,
    pub u: ProjectionGrad,
    pub w: Vec<f64>,
    pub classifier_w: Matrix,
    pub classifier_b: Vec<f64>,
}

impl ModelGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.v.slices();
        out.extend(self.u.slices());
        out.push(&self.w);
        out.push(self.classifier_w.as_slice());
        out.push(&self.classifier_b);
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

struct Trace {
    v_cache: Option<ForwardCache>,
    u_cache: Option<ForwardCache>,
    t: Matrix,
    g: Matrix,
    /// Dropout multipliers (0 or 1/(1−p)); `None` when dropout is inactive.
    mask: Option<Vec<f64>>,
    gated: Matrix,
    out: ModelOutput,
}

fn forward_trace(model: &ABMILModel, bag: &Bag, dropout_rng: Option<&mut RngStream>) -> Result<Trace> {
    model.validate(bag)?;
    let h = &bag.instances;
    let layer = &model.attention;
    let (a_v, v_cache) = layer.v.forward(h)?;
    let (a_u, u_cache) = layer.u.forward(h)?;
    let t = a_v.map(f64::tanh);
    let g = a_u.map(sigmoid);
    let mut gated = t.hadamard(&g)?;
    let mask = match dropout_rng {
        Some(rng) if model.dropout > 0.0 => {
            let keep = 1.0 - model.dropout;
            let mask: Vec<f64> =
                (0..gated.as_slice().len()).map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 }).collect();
            gated.as_mut_slice().iter_mut().zip(&mask).for_each(|(x, m)| *x *= m);
            Some(mask)
        }
        _ => None,
    };
    let scores = gated.mul_vec(&layer.w)?;
    let weights = softmax(&scores);
    let z = h.tr_mul_vec(&weights)?;
    let mut logits = model.classifier_w.tr_mul_vec(&z)?;
    logits.iter_mut().zip(&model.classifier_b).for_each(|(l, b)| *l += b);
    Ok(Trace {
        v_cache,
        u_cache,
        t,
        g,
        mask,
        gated,
        out: ModelOutput { logits, attention: AttentionOutput { weights, z } },
    })
}

/// Attention weights and bag feature (no dropout).
pub fn gated_attention(layer: &AttentionLayer, h: &Matrix) -> Result<AttentionOutput> {
    layer.validate()?;
    if h.cols() != layer.v.input_dim() {
        return dim_err(format!("instances have {} columns, attention expects {}", h.cols(), layer.v.input_dim()));
    }
    let t = layer.v.forward(h)?.0.map(f64::tanh);
    let g = layer.u.forward(h)?.0.map(sigmoid);
    let weights = softmax(&t.hadamard(&g)?.mul_vec(&layer.w)?);
    let z = h.tr_mul_vec(&weights)?;
    Ok(AttentionOutput { weights, z })
}

/// Logits and attention; dropout is applied only when `train_mode` and an rng is given.
pub fn model_forward(
    model: &ABMILModel,
    bag: &Bag,
    train_mode: bool,
    rng: Option<&mut RngStream>,
) -> Result<ModelOutput> {
    let rng = if train_mode { rng } else { None };
    Ok(forward_trace(model, bag, rng)?.out)
}

/// Class probabilities in evaluation mode.
pub fn predict_proba(model: &ABMILModel, bag: &Bag) -> Result<Vec<f64>> {
    Ok(softmax(&model_forward(model, bag, false, None)?.logits))
}

/// Cross-entropy loss and gradients of every trainable parameter.
///
/// Dropout is active when `dropout_rng` is given.
pub fn loss_and_grad(
    model: &ABMILModel,
    bag: &Bag,
    dropout_rng: Option<&mut RngStream>,
) -> Result<(f64, ModelGrads)> {
    if bag.label >= model.classes() {
        return invalid(format!("label {} out of range for {} classes", bag.label, model.classes()));
    }
    let tr = forward_trace(model, bag, dropout_rng)?;
    let h = &bag.instances;
    let logits = &tr.out.logits;
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let loss = lse - logits[bag.label];

    let mut dlogits = softmax(logits);
    dlogits[bag.label] -= 1.0;
    let z = &tr.out.attention.z;
    let a = &tr.out.attention.weights;
    let classifier_w = Matrix::from_fn(z.len(), dlogits.len(), |i, j| z[i] * dlogits[j]);
    let dz = model.classifier_w.mul_vec(&dlogits)?;

    // z = Hᵀa; then back through the softmax
    let da = h.mul_vec(&dz)?;
    let mean = dot(a, &da);
    let ds: Vec<f64> = a.iter().zip(&da).map(|(ai, di)| ai * (di - mean)).collect();

    let w = tr.gated.tr_mul_vec(&ds)?;
    let (n, d_h) = tr.gated.shape();
    let mut dp = Matrix::from_fn(n, d_h, |k, j| ds[k] * model.attention.w[j]);
    if let Some(mask) = &tr.mask {
        dp.as_mut_slice().iter_mut().zip(mask).for_each(|(x, m)| *x *= m);
    }
    let d_av = dp.zip_with(&tr.g, |p, g| p * g)?.zip_with(&tr.t, |x, t| x * (1.0 - t * t))?;
    let d_au = dp.zip_with(&tr.t, |p, t| p * t)?.zip_with(&tr.g, |x, g| x * g * (1.0 - g))?;
    let v = model.attention.v.backward(h, &d_av, tr.v_cache.as_ref())?;
    let u = model.attention.u.backward(h, &d_au, tr.u_cache.as_ref())?;
    Ok((loss, ModelGrads { v, u, w, classifier_w, classifier_b: dlogits }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(attention: AttentionKind, dropout: f64) -> ModelSpec {
        ModelSpec { input_dim: 7, hidden_dim: 5, classes: 3, dropout, attention }
    }

    fn bag(n: usize, seed: u64) -> Bag {
        let mut rng = RngStream::new(seed, 7);
        Bag::new(Matrix::from_fn(n, 7, |_, _| rng.normal()), 1)
    }

    fn mr() -> AttentionKind {
        AttentionKind::Mr { rank: 2, variant: Variant::Full }
    }

    #[test]
    fn singleton_and_duplicate_bags() {
        let model = ABMILModel::new(&spec(AttentionKind::Linear, 0.0), &RngStream::new(0, 0)).unwrap();
        let b = bag(1, 1);
        let out = gated_attention(&model.attention, &b.instances).unwrap();
        assert_eq!(out.weights, vec![1.0]);
        assert_eq!(out.z, b.instances.row(0));

        let twin = Matrix::from_fn(2, 7, |_, j| b.instances[(0, j)]);
        let out = gated_attention(&model.attention, &twin).unwrap();
        assert_eq!(out.weights, vec![0.5, 0.5]);
        for (z, h) in out.z.iter().zip(b.instances.row(0)) {
            assert!((z - h).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_matches_scalar_loop() {
        let model = ABMILModel::new(&spec(mr(), 0.0), &RngStream::new(3, 0)).unwrap();
        let mut m = model.clone();
        if let Projection::Mr(b) = &mut m.attention.v {
            b.set_w1(Matrix::from_fn(2, 5, |i, j| 0.1 * (i as f64 + 1.0) - 0.05 * j as f64)).unwrap();
        }
        let b = bag(6, 2);
        let out = gated_attention(&m.attention, &b.instances).unwrap();

        let proj = |p: &Projection, x: &[f64]| -> Vec<f64> {
            let Projection::Mr(blk) = p else { unreachable!() };
            (0..5)
                .map(|j| {
                    let mut s = 0.0;
                    for q in 0..2 {
                        let hq: f64 = (0..7).map(|i| x[i] * blk.w2()[(i, q)]).sum();
                        s += hq * 0.5 * (1.0 + libm::erf(hq / 2f64.sqrt())) * blk.w1()[(q, j)];
                    }
                    s + (0..7).map(|i| x[i] * blk.anchor()[(i, j)]).sum::<f64>()
                })
                .collect()
        };
        let scores: Vec<f64> = (0..6)
            .map(|k| {
                let x = b.instances.row(k);
                let (pv, pu) = (proj(&m.attention.v, x), proj(&m.attention.u, x));
                (0..5).map(|j| m.attention.w[j] * pv[j].tanh() / (1.0 + (-pu[j]).exp())).sum()
            })
            .collect();
        let total: f64 = scores.iter().map(|s| s.exp()).sum();
        for k in 0..6 {
            assert!((out.weights[k] - scores[k].exp() / total).abs() < 1e-12);
        }
        for j in 0..7 {
            let zj: f64 = (0..6).map(|k| out.weights[k] * b.instances[(k, j)]).sum();
            assert!((out.z[j] - zj).abs() < 1e-12);
        }
        assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_dropout_means_train_equals_eval() {
        let model = ABMILModel::new(&spec(AttentionKind::Linear, 0.0), &RngStream::new(0, 0)).unwrap();
        let b = bag(5, 1);
        let eval = model_forward(&model, &b, false, None).unwrap();
        let train = model_forward(&model, &b, true, Some(&mut RngStream::new(9, 9))).unwrap();
        assert_eq!(eval, train);
    }

    #[test]
    fn constant_head() {
        let mut model = ABMILModel::new(&spec(AttentionKind::Linear, 0.0), &RngStream::new(0, 0)).unwrap();
        model.classifier_w = Matrix::zeros(7, 3);
        model.classifier_b = vec![0.5, -1.0, 2.0];
        for s in 0..3 {
            assert_eq!(model_forward(&model, &bag(4, s), false, None).unwrap().logits, model.classifier_b);
        }
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let mut model = ABMILModel::new(&spec(AttentionKind::Linear, 0.0), &RngStream::new(0, 0)).unwrap();
        model.classifier_w = Matrix::zeros(7, 3);
        model.classifier_b = vec![0.0; 3];
        let (loss, _) = loss_and_grad(&model, &bag(4, 0), None).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mr_model_at_init_equals_anchor_model() {
        let rng = RngStream::new(11, 0);
        let mr_model = ABMILModel::new(&spec(mr(), 0.25), &rng).unwrap();
        let plain = ABMILModel::new(&spec(AttentionKind::Linear, 0.25), &rng).unwrap();
        assert_eq!(mr_model.anchor_equivalent(), plain);
        let b = bag(9, 4);
        assert_eq!(
            model_forward(&mr_model, &b, false, None).unwrap(),
            model_forward(&plain, &b, false, None).unwrap()
        );
    }

    #[test]
    fn permutation_invariance() {
        let model = ABMILModel::new(&spec(mr(), 0.0), &RngStream::new(5, 0)).unwrap();
        let b = bag(6, 3);
        let perm = [3, 0, 5, 1, 4, 2];
        let pb = Bag::new(b.instances.select_rows(&perm).unwrap(), b.label);
        let (o, p) = (model_forward(&model, &b, false, None).unwrap(), model_forward(&model, &pb, false, None).unwrap());
        for (i, &src) in perm.iter().enumerate() {
            assert!((p.attention.weights[i] - o.attention.weights[src]).abs() < 1e-12);
        }
        for (x, y) in o.logits.iter().zip(&p.logits) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn census() {
        let lin = ABMILModel::new(&spec(AttentionKind::Linear, 0.0), &RngStream::new(0, 0)).unwrap();
        assert_eq!(lin.trainable_param_count(), 7 * 3 + 3 + 2 * 7 * 5 + 5);
        let m = ABMILModel::new(&spec(mr(), 0.0), &RngStream::new(0, 0)).unwrap();
        assert_eq!(m.trainable_param_count(), 7 * 3 + 3 + 2 * 2 * (7 + 5) + 5);
    }

    #[test]
    fn bad_inputs() {
        let model = ABMILModel::new(&spec(AttentionKind::Linear, 0.0), &RngStream::new(0, 0)).unwrap();
        let mut b = bag(3, 0);
        b.label = 3;
        assert!(loss_and_grad(&model, &b, None).is_err());
        let wrong = Bag::new(Matrix::zeros(2, 6), 0);
        assert!(model_forward(&model, &wrong, false, None).is_err());
        assert!(ABMILModel::new(&ModelSpec { classes: 1, ..spec(AttentionKind::Linear, 0.0) }, &RngStream::new(0, 0)).is_err());
        assert!(ABMILModel::new(&spec(AttentionKind::Linear, 1.0), &RngStream::new(0, 0)).is_err());
    }

    /// Perturb parameter `p` entry `i` of a model clone and return the loss.
    fn perturbed_loss(model: &ABMILModel, bag: &Bag, p: usize, i: usize, e: f64) -> f64 {
        let mut m = model.clone();
        m.params_mut()[p][i] += e;
        loss_and_grad(&m, bag, None).unwrap().0
    }

    fn gradient_check(model: &ABMILModel, bag: &Bag) {
        let (_, g) = loss_and_grad(model, bag, None).unwrap();
        let h = 1e-5;
        for (p, slice) in g.slices().iter().enumerate() {
            for (i, &a) in slice.iter().enumerate() {
                let fd = (perturbed_loss(model, bag, p, i, h) - perturbed_loss(model, bag, p, i, -h)) / (2.0 * h);
                let denom = a.abs().max(fd.abs()).max(1e-4);
                assert!((a - fd).abs() / denom < 1e-4, "param {p}[{i}]: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for attention in [AttentionKind::Linear, mr(), AttentionKind::Mr { rank: 2, variant: Variant::AnchorTrainable }] {
            let mut model = ABMILModel::new(&spec(attention, 0.0), &RngStream::new(21, 0)).unwrap();
            // move W1 off zero so every path carries gradient
            for (k, proj) in [&mut model.attention.v, &mut model.attention.u].into_iter().enumerate() {
                if let Projection::Mr(b) = proj {
                    b.set_w1(Matrix::from_fn(2, 5, |i, j| 0.3 * ((i * 5 + j + k) as f64).sin())).unwrap();
                }
            }
            gradient_check(&model, &bag(4, 8));
        }
    }

    #[test]
    fn dropout_gradient_uses_the_same_mask() {
        let model = ABMILModel::new(&spec(mr(), 0.25), &RngStream::new(2, 0)).unwrap();
        let b = bag(4, 1);
        let (l1, g1) = loss_and_grad(&model, &b, Some(&mut RngStream::new(5, 5))).unwrap();
        let (l2, g2) = loss_and_grad(&model, &b, Some(&mut RngStream::new(5, 5))).unwrap();
        assert_eq!((l1, &g1), (l2, &g2));
        // finite difference on the classifier bias under the fixed mask
        let h = 1e-6;
        let mut m = model.clone();
        m.classifier_b[0] += h;
        let lp = loss_and_grad(&m, &b, Some(&mut RngStream::new(5, 5))).unwrap().0;
        m.classifier_b[0] -= 2.0 * h;
        let lm = loss_and_grad(&m, &b, Some(&mut RngStream::new(5, 5))).unwrap().0;
        assert!(((lp - lm) / (2.0 * h) - g1.classifier_b[0]).abs() < 1e-7);
    }
}
