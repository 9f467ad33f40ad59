use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{class_weights_from_counts, EmotionLabel, NUM_CLASSES};
use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, ConfusionMatrix};

use super::loss::{focal_loss_from_logits, focal_loss_grad, softmax};
use super::optim::{adamw_step, cosine_warmup_lr, AdamWState};
use super::HeadParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Focal loss focusing parameter.
    pub gamma: f64,
    pub label_smoothing: f64,
    /// Early-stopping patience in epochs, on validation UA.
    pub patience: usize,
    /// 0 = linear head.
    pub hidden_dim: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 16,
            peak_lr: 5e-5,
            warmup_ratio: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            gamma: 2.0,
            label_smoothing: 0.1,
            patience: 6,
            hidden_dim: 0,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train.{m}")));
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("epochs, batch_size and patience must be positive");
        }
        if !(self.peak_lr > 0.0) || !(self.adam_eps > 0.0) || self.weight_decay < 0.0 {
            return bad("peak_lr and adam_eps must be positive, weight_decay nonnegative");
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.gamma < 0.0 || !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("gamma must be >= 0 and label_smoothing in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Labeled embeddings the trainer can draw from. `epoch` is 0-based and
/// lets a set hand out a different augmented variant each epoch.
pub trait ExampleSet {
    fn len(&self) -> usize;
    fn label(&self, i: usize) -> EmotionLabel;
    fn features(&self, i: usize, epoch: usize) -> &[f64];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// In-memory examples with one or more precomputed variants each.
#[derive(Debug, Clone, Default)]
pub struct EmbeddedSet {
    labels: Vec<EmotionLabel>,
    variants: Vec<Vec<Embedding>>,
}

impl EmbeddedSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, label: EmotionLabel, embedding: Embedding) {
        self.push_variants(label, vec![embedding]);
    }

    /// Epoch `e` sees `variants[e % variants.len()]`.
    pub fn push_variants(&mut self, label: EmotionLabel, variants: Vec<Embedding>) {
        assert!(!variants.is_empty(), "example needs at least one variant");
        self.labels.push(label);
        self.variants.push(variants);
    }

    pub fn labels(&self) -> &[EmotionLabel] {
        &self.labels
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (EmotionLabel, Embedding)>) -> Self {
        let mut s = Self::new();
        for (l, e) in pairs {
            s.push(l, e);
        }
        s
    }
}

impl ExampleSet for EmbeddedSet {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn label(&self, i: usize) -> EmotionLabel {
        self.labels[i]
    }

    fn features(&self, i: usize, epoch: usize) -> &[f64] {
        let v = &self.variants[i];
        v[epoch % v.len()].as_slice()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ua: f64,
    pub val_wa: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: HeadParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_ua: f64,
    pub class_weights: Vec<f64>,
}

/// Confusion matrix of argmax predictions over a set (variant 0).
pub fn evaluate(head: &HeadParams, set: &dyn ExampleSet) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::zeros(head.classes());
    for i in 0..set.len() {
        let p = super::ProbabilityVector(softmax(&head.logits(set.features(i, 0))?));
        cm.add(set.label(i).index(), p.argmax());
    }
    Ok(cm)
}

/// Mini-batch focal-loss training with AdamW, cosine warmup and early
/// stopping on validation UA. Only `train` feeds gradients; `val` is read
/// once per epoch for scoring. Returns the parameters of the best epoch
/// (earliest on ties).
pub fn train_head(train: &dyn ExampleSet, val: &dyn ExampleSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be nonempty".into()));
    }
    let mut counts = [0usize; NUM_CLASSES];
    for i in 0..train.len() {
        counts[train.label(i).index()] += 1;
    }
    let alpha = class_weights_from_counts(&counts)?;
    let dim = train.features(0, 0).len();

    let mut head = HeadParams::init(dim, NUM_CLASSES, cfg.hidden_dim, cfg.seed);
    let mut state = AdamWState::new(&head);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, HeadParams)> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = head.zeroed();
            for &i in batch {
                let x = train.features(i, epoch);
                if x.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: x.len(),
                    });
                }
                let target = train.label(i).index();
                let (logits, cache) = head.forward_train(x, cfg.dropout, &mut rng);
                loss_sum += focal_loss_from_logits(&logits, target, &alpha, cfg.gamma, cfg.label_smoothing);
                let mut dl = focal_loss_grad(&logits, target, &alpha, cfg.gamma, cfg.label_smoothing);
                let n = batch.len() as f64;
                dl.iter_mut().for_each(|v| *v /= n);
                head.backward(&cache, &dl, &mut grads);
            }
            lr = cosine_warmup_lr(step, total_steps, cfg);
            adamw_step(&mut head, &grads, &mut state, lr, cfg)?;
            step += 1;
        }

        let report = compute_metrics(&evaluate(&head, val)?)?;
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            val_ua: report.ua,
            val_wa: report.wa,
            lr,
        });
        log::debug!("epoch {} loss {:.5} val UA {:.4}", epoch + 1, loss_sum / train.len() as f64, report.ua);

        match &best {
            Some((_, best_ua, _)) if report.ua <= *best_ua => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((epoch + 1, report.ua, head.clone()));
                stale = 0;
            }
        }
    }

    let (best_epoch, best_val_ua, head) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        head,
        history,
        best_epoch,
        best_val_ua,
        class_weights: alpha,
    })
}
