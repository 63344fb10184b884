use serde::{Deserialize, Serialize};

use super::optim::{lr_schedule, AdamW};
use super::{Dataset, Episode};
use crate::error::{invalid, Error, Result};
use crate::mil::{loss_and_grad, model_forward, ABMILModel, Bag};
use crate::numerics::{stream_key, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub start_factor: f64,
    pub end_factor: f64,
    pub patience: usize,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-5,
            start_factor: 0.01,
            end_factor: 0.1,
            patience: 20,
            min_epochs: 50,
            max_epochs: 100,
            dropout: 0.25,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return invalid("patience must be at least 1");
        }
        if self.max_epochs == 0 || self.min_epochs > self.max_epochs {
            return invalid(format!("need 1 ≤ max_epochs and min_epochs ≤ max_epochs, got {} and {}", self.max_epochs, self.min_epochs));
        }
        for (name, f) in [("start_factor", self.start_factor), ("end_factor", self.end_factor)] {
            if !(f > 0.0 && f <= 1.0) {
                return invalid(format!("{name} must be in (0, 1], got {f}"));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return invalid("learning rate and weight decay must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Tracks the best validation loss. Epochs are numbered from 1.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_epochs: usize,
    max_epochs: usize,
    best_loss: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_epochs: usize, max_epochs: usize) -> Self {
        Self { patience, min_epochs, max_epochs, best_loss: f64::INFINITY, best_epoch: 0 }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best_loss)
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = val_loss < self.best_loss;
        if improved {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
        }
        let patience_out = epoch - self.best_epoch >= self.patience && epoch >= self.min_epochs;
        StopDecision { improved, stop: patience_out || epoch >= self.max_epochs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// True when patience ran out before `max_epochs`.
    pub early_stopped: bool,
}

fn eval_loss(model: &ABMILModel, bag: &Bag) -> Result<f64> {
    let logits = model_forward(model, bag, false, None)?.logits;
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() - logits[bag.label])
}

/// Bag-averaged cross-entropy in evaluation mode.
pub(crate) fn mean_loss(model: &ABMILModel, dataset: &Dataset, bags: &[usize], epoch: usize) -> Result<f64> {
    let mut total = 0.0;
    for &i in bags {
        let loss = eval_loss(model, &dataset.bags[i])?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, bag: i, loss });
        }
        total += loss;
    }
    Ok(total / bags.len() as f64)
}

/// One bag per optimizer step over a freshly shuffled training set each epoch,
/// early stopping on validation loss, best-validation weights restored.
pub fn train_model(
    mut model: ABMILModel,
    dataset: &Dataset,
    episode: &Episode,
    config: &TrainConfig,
) -> Result<(ABMILModel, TrainHistory)> {
    config.validate()?;
    if episode.train.is_empty() || episode.val.is_empty() {
        return invalid("training and validation splits must be nonempty");
    }
    model.dropout = config.dropout;
    let root = RngStream::new(config.seed, stream_key("train"));
    let mut opt = AdamW::new(config.weight_decay);
    let mut stopper = EarlyStopping::new(config.patience, config.min_epochs, config.max_epochs);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut order = episode.train.clone();

    for epoch in 1..=config.max_epochs {
        let lr = config.lr * lr_schedule(epoch - 1, config);
        let mut shuffle_rng = root.derive(2 * epoch as u64);
        let mut dropout_rng = root.derive(2 * epoch as u64 + 1);
        shuffle_rng.shuffle(&mut order);
        let mut train_total = 0.0;
        for &i in &order {
            let (loss, grads) = loss_and_grad(&model, &dataset.bags[i], Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, bag: i, loss });
            }
            train_total += loss;
            opt.step(&mut model.params_mut(), &grads.slices(), lr)?;
        }
        let val_loss = mean_loss(&model, dataset, &episode.val, epoch)?;
        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best = model.clone();
        }
        epochs.push(EpochRecord { epoch, lr, train_loss: train_total / order.len() as f64, val_loss });
        if decision.stop {
            break;
        }
    }
    let (best_epoch, best_val_loss) = stopper.best();
    let early_stopped = epochs.len() < config.max_epochs;
    Ok((best, TrainHistory { epochs, best_epoch, best_val_loss, early_stopped }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{gen_synthetic, sample_episode, EpisodeSpec, Manifold, SyntheticSpec};
    use crate::mil::{AttentionKind, ModelSpec};
    use crate::mrblock::Variant;

    fn setup() -> (Dataset, Episode) {
        let spec = SyntheticSpec {
            ambient_dim: 16,
            bags_per_class: 10,
            min_instances: 8,
            max_instances: 12,
            ..SyntheticSpec::reference(Manifold::Sphere)
        };
        let ds = gen_synthetic(&spec, &RngStream::new(0, 0)).unwrap().dataset;
        let ep = sample_episode(&ds, &EpisodeSpec::new(3), &mut RngStream::new(1, 0)).unwrap();
        (ds, ep)
    }

    fn model(attention: AttentionKind) -> ABMILModel {
        let spec = ModelSpec { input_dim: 16, hidden_dim: 8, classes: 3, dropout: 0.25, attention };
        ABMILModel::new(&spec, &RngStream::new(2, 0)).unwrap()
    }

    #[test]
    fn patience_one_stops_right_after_minimum() {
        let mut es = EarlyStopping::new(1, 50, 200);
        for epoch in 1..=50 {
            let d = es.observe(epoch, 100.0 - epoch as f64);
            assert!(d.improved && !d.stop, "epoch {epoch}");
        }
        let d = es.observe(51, 60.0);
        assert!(!d.improved && d.stop);
        assert_eq!(es.best(), (50, 50.0));
    }

    #[test]
    fn never_stops_before_minimum() {
        let mut es = EarlyStopping::new(2, 10, 20);
        es.observe(1, 1.0);
        for epoch in 2..10 {
            assert!(!es.observe(epoch, 2.0).stop);
        }
        assert!(es.observe(10, 2.0).stop);
        let mut capped = EarlyStopping::new(50, 1, 3);
        assert!(!capped.observe(2, 1.0).stop);
        assert!(capped.observe(3, 0.5).stop);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_alone() {
        let (ds, ep) = setup();
        let m0 = model(AttentionKind::Linear);
        let cfg = TrainConfig { lr: 0.0, min_epochs: 3, max_epochs: 6, patience: 2, ..TrainConfig::default() };
        let (m1, hist) = train_model(m0.clone(), &ds, &ep, &cfg).unwrap();
        assert_eq!(m1, m0);
        assert!(hist.epochs.iter().all(|e| e.val_loss == hist.epochs[0].val_loss));
        assert_eq!(hist.best_epoch, 1);
        assert_eq!(hist.epochs.len(), 3);
        assert!(hist.early_stopped);
    }

    #[test]
    fn restores_best_weights_and_freezes_anchor() {
        let (ds, ep) = setup();
        let m0 = model(AttentionKind::Mr { rank: 2, variant: Variant::Full });
        let cfg = TrainConfig { lr: 5e-3, min_epochs: 5, max_epochs: 15, patience: 3, ..TrainConfig::default() };
        let (m1, hist) = train_model(m0.clone(), &ds, &ep, &cfg).unwrap();
        let min = hist.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(hist.best_val_loss, min);
        assert_eq!(mean_loss(&m1, &ds, &ep.val, 0).unwrap(), min);
        assert_eq!(m1.attention.v.linear_part(), m0.attention.v.linear_part());
        assert_eq!(m1.attention.u.linear_part(), m0.attention.u.linear_part());
        assert_ne!(m1, m0);
        // same seed, same result
        let (m2, hist2) = train_model(m0, &ds, &ep, &cfg).unwrap();
        assert_eq!((m1, hist), (m2, hist2));
    }

    #[test]
    fn non_finite_loss_names_epoch_and_bag() {
        let (ds, ep) = setup();
        let mut m = model(AttentionKind::Linear);
        m.classifier_b[0] = f64::NAN;
        let cfg = TrainConfig { min_epochs: 1, max_epochs: 2, ..TrainConfig::default() };
        match train_model(m, &ds, &ep, &cfg) {
            Err(Error::NonFiniteLoss { epoch, bag, .. }) => {
                assert_eq!(epoch, 1);
                assert!(ep.train.contains(&bag));
            }
            other => panic!("expected a non-finite loss error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { patience: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { min_epochs: 101, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { end_factor: 1.5, ..TrainConfig::default() }.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }
}
