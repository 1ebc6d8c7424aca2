//! Training, fine-tuning, evaluation and the depth ablation.
//!
//! One epoch is one shuffled pass over the training set (the last partial
//! batch is kept). Every `eval_every` epochs, and always at the final epoch,
//! the network is evaluated on the validation set and a [`TrainingRecord`]
//! is appended; the parameters with the best validation IoU are retained.

mod ablation;
mod artifacts;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{augment, AnnotatedSample, AugmentationConfig, BinaryMask};
use crate::netbuilder::{load_checkpoint, Mode, NetworkConfig, NetworkHandle};
use crate::nn::{Param, Tensor};
use crate::objectives::{iou, sigmoid, Objective, PredictionMap, TargetMap};
use crate::predictor::Segmenter;

pub use ablation::{run_depth_ablation, AblationRow, AblationSpec, AblationTable};
pub use artifacts::{dataset_digest, read_curves, write_curves, write_training_artifacts, RunManifest};

/// Probability at or above which a pixel counts as foreground.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eval_every: usize,
    /// `None` trains on the unmodified samples.
    pub augmentation: Option<AugmentationConfig>,
    pub seed: u64,
    pub objective: Objective,
    /// Stop as soon as an evaluated epoch reaches this validation IoU.
    pub target_val_iou: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 14,
            max_epochs: 100,
            eval_every: 10,
            augmentation: Some(AugmentationConfig::default()),
            seed: 0,
            objective: Objective::SoftDice,
            target_val_iou: None,
        }
    }
}

impl TrainConfig {
    /// Defaults for continuing from a trained network.
    pub fn fine_tune() -> Self {
        Self {
            learning_rate: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if let Objective::Lp(p) = self.objective {
            if !(p >= 1.0) {
                return Err(Error::Config(format!("l_p exponent must be >= 1, got {p}")));
            }
        }
        if let Some(t) = self.target_val_iou {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("target_val_iou must be in (0, 1], got {t}")));
            }
        }
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }
}

/// One row of the learning curves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when training without a validation set.
    pub val_loss: Option<f64>,
    pub train_iou: f64,
    pub val_iou: Option<f64>,
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let lr = (self.learning_rate * c2.sqrt() / c1) as f32;
        // Folding the bias corrections into the step size rescales epsilon.
        let eps = (self.eps * c2.sqrt()) as f32;
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            if p.grad.is_empty() {
                continue;
            }
            for (((w, &g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * *m / (v.sqrt() + eps);
            }
        }
    }
}

fn stack_images(samples: &[&AnnotatedSample]) -> Result<Tensor> {
    let side = samples[0].image.width();
    Tensor::stack(samples.iter().map(|s| s.image.as_planar()), 3, side, side)
}

fn mask_from_logits(logits: &[f32], side: usize) -> BinaryMask {
    // sigmoid(z) >= 0.5 exactly when z >= 0
    let data = logits.iter().map(|&z| u8::from(sigmoid(z as f64) >= THRESHOLD)).collect();
    BinaryMask::from_values(side, side, data).expect("square logits")
}

/// Per-sample losses, IoUs and (optionally) the batch-mean loss gradient
/// with respect to the logits.
fn score_batch(
    logits: &Tensor,
    samples: &[&AnnotatedSample],
    objective: Objective,
    want_grad: bool,
) -> Result<(Vec<f64>, Vec<f64>, Option<Tensor>)> {
    let side = logits.height();
    let n = samples.len();
    let mut losses = Vec::with_capacity(n);
    let mut ious = Vec::with_capacity(n);
    let mut grad = want_grad.then(|| Tensor::zeros(n, 1, side, side));
    for (i, s) in samples.iter().enumerate() {
        let z = logits.sample(i);
        let x = PredictionMap::from_logits(side, side, z)?;
        let t = TargetMap::from_mask(&s.mask);
        losses.push(objective.value(&x, &t)?);
        ious.push(iou(&mask_from_logits(z, side), &s.mask)?);
        if let Some(g) = grad.as_mut() {
            let dx = objective.gradient(&x, &t)?;
            for ((gz, d), p) in g.sample_mut(i).iter_mut().zip(dx).zip(x.values()) {
                *gz = (d * p * (1.0 - p) / n as f64) as f32;
            }
        }
    }
    Ok((losses, ious, grad))
}

/// Mean of values summed in sorted order, so the result does not depend on
/// the order the samples were visited.
fn order_free_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mean_iou: f64,
    pub mean_loss: f64,
    pub ious: Vec<f64>,
    pub losses: Vec<f64>,
}

const EVAL_BATCH: usize = 8;

/// Score a segmenter on a dataset with binarized single-pass predictions.
/// With `augmentation`, every sample is first perturbed by a draw seeded
/// from the augmentation seed, so repeated calls agree.
pub fn evaluate(seg: &impl Segmenter, dataset: &[AnnotatedSample], augmentation: Option<&AugmentationConfig>) -> Result<Evaluation> {
    evaluate_with(seg, dataset, augmentation, Objective::SoftDice)
}

pub fn evaluate_with(
    seg: &impl Segmenter,
    dataset: &[AnnotatedSample],
    augmentation: Option<&AugmentationConfig>,
    objective: Objective,
) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    let side = seg.input_side();
    let augmented: Vec<AnnotatedSample>;
    let samples: &[AnnotatedSample] = match augmentation {
        Some(cfg) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            augmented = dataset.iter().map(|s| augment(s, cfg, &mut rng)).collect();
            &augmented
        }
        None => dataset,
    };
    let mut ious = Vec::with_capacity(samples.len());
    let mut losses = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&AnnotatedSample> = chunk.iter().collect();
        check_side(&refs, side)?;
        let logits = seg.logits(&stack_images(&refs)?)?;
        let (l, i, _) = score_batch(&logits, &refs, objective, false)?;
        losses.extend(l);
        ious.extend(i);
    }
    Ok(Evaluation {
        mean_iou: order_free_mean(&ious),
        mean_loss: order_free_mean(&losses),
        ious,
        losses,
    })
}

fn check_side(samples: &[&AnnotatedSample], side: usize) -> Result<()> {
    match samples.iter().find(|s| s.image.width() != side || s.image.height() != side) {
        Some(s) => Err(Error::Shape(format!(
            "sample {} is {}x{}, network expects {side}x{side}",
            s.source_id,
            s.image.width(),
            s.image.height()
        ))),
        None => Ok(()),
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation IoU (or the last evaluation when
    /// there is no validation set).
    pub best: NetworkHandle,
    pub best_epoch: usize,
    pub best_val_iou: Option<f64>,
    pub last: NetworkHandle,
    pub records: Vec<TrainingRecord>,
    pub config: TrainConfig,
}

/// Epoch-by-epoch driver; [`train`] runs it to completion.
pub struct Trainer<'a> {
    net: NetworkHandle,
    train_set: &'a [AnnotatedSample],
    val_set: &'a [AnnotatedSample],
    config: TrainConfig,
    adam: Adam,
    order_rng: ChaCha8Rng,
    epoch: usize,
    records: Vec<TrainingRecord>,
    best: Option<(NetworkHandle, usize, Option<f64>)>,
    reached_target: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(
        net: NetworkHandle,
        train_set: &'a [AnnotatedSample],
        val_set: &'a [AnnotatedSample],
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if train_set.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        let side = net.config().input_side;
        let all: Vec<&AnnotatedSample> = train_set.iter().chain(val_set).collect();
        check_side(&all, side)?;
        Ok(Self {
            net,
            train_set,
            val_set,
            adam: Adam::new(config.learning_rate),
            order_rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            epoch: 0,
            records: Vec::new(),
            best: None,
            reached_target: false,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.reached_target || self.epoch >= self.config.max_epochs
    }

    pub fn network(&self) -> &NetworkHandle {
        &self.net
    }

    pub fn records(&self) -> &[TrainingRecord] {
        &self.records
    }

    pub fn best_val_iou(&self) -> Option<f64> {
        self.best.as_ref().and_then(|b| b.2)
    }

    /// Train one epoch; returns the record when this epoch is evaluated.
    pub fn run_epoch(&mut self) -> Result<Option<TrainingRecord>> {
        if self.is_done() {
            return Err(Error::Config(format!("training finished after epoch {}", self.epoch)));
        }
        self.epoch += 1;
        let epoch = self.epoch;
        let mut order: Vec<usize> = (0..self.train_set.len()).collect();
        order.shuffle(&mut self.order_rng);
        let mut aug_rng = ChaCha8Rng::seed_from_u64(
            self.config.augmentation.as_ref().map_or(0, |a| a.seed) ^ self.config.seed.rotate_left(32) ^ epoch as u64,
        );

        self.net.set_mode(Mode::Training);
        let (mut losses, mut ious) = (Vec::new(), Vec::new());
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let owned: Vec<AnnotatedSample> = match &self.config.augmentation {
                Some(cfg) => chunk.iter().map(|&i| augment(&self.train_set[i], cfg, &mut aug_rng)).collect(),
                None => Vec::new(),
            };
            let batch: Vec<&AnnotatedSample> = if owned.is_empty() {
                chunk.iter().map(|&i| &self.train_set[i]).collect()
            } else {
                owned.iter().collect()
            };
            let (logits, tape) = self.net.forward_train(&stack_images(&batch)?)?;
            let diverged = |value| Error::NonFinite {
                epoch,
                batch: b + 1,
                value,
            };
            if !logits.all_finite() {
                return Err(diverged(f64::NAN));
            }
            let (l, i, grad) = score_batch(&logits, &batch, self.config.objective, true)?;
            let mean = l.iter().sum::<f64>() / l.len() as f64;
            if !mean.is_finite() {
                return Err(diverged(mean));
            }
            self.net.zero_grad();
            self.net.backward(tape, grad.expect("gradient requested"))?;
            self.adam.step(self.net.params_mut());
            losses.extend(l);
            ious.extend(i);
        }
        self.net.set_mode(Mode::Evaluation);

        if epoch % self.config.eval_every != 0 && epoch != self.config.max_epochs {
            return Ok(None);
        }
        let (val_loss, val_iou) = if self.val_set.is_empty() {
            (None, None)
        } else {
            let e = evaluate_with(&self.net, self.val_set, None, self.config.objective)?;
            (Some(e.mean_loss), Some(e.mean_iou))
        };
        let record = TrainingRecord {
            epoch,
            train_loss: order_free_mean(&losses),
            val_loss,
            train_iou: order_free_mean(&ious),
            val_iou,
        };
        self.records.push(record);

        let improved = match (&self.best, val_iou) {
            (Some((_, _, Some(best))), Some(v)) => v > *best,
            _ => true,
        };
        if improved {
            self.best = Some((self.net.clone(), epoch, val_iou));
        }
        if let (Some(t), Some(v)) = (self.config.target_val_iou, val_iou) {
            self.reached_target = v >= t;
        }
        Ok(Some(record))
    }

    pub fn finish(self) -> TrainOutcome {
        let (best, best_epoch, best_val_iou) = self
            .best
            .unwrap_or_else(|| (self.net.clone(), self.epoch, None));
        TrainOutcome {
            best,
            best_epoch,
            best_val_iou,
            last: self.net,
            records: self.records,
            config: self.config,
        }
    }
}

/// Train from the network's current parameters for `config.max_epochs` epochs.
pub fn train(
    net: NetworkHandle,
    train_set: &[AnnotatedSample],
    val_set: &[AnnotatedSample],
    config: TrainConfig,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(net, train_set, val_set, config)?;
    while !trainer.is_done() {
        if let Some(r) = trainer.run_epoch()? {
            log::info!(
                "epoch {}: train loss {:.4} iou {:.4}, val loss {:?} iou {:?}",
                r.epoch,
                r.train_loss,
                r.train_iou,
                r.val_loss,
                r.val_iou
            );
        }
    }
    Ok(trainer.finish())
}

/// Continue training a saved network; `expected` guards against loading a
/// checkpoint of a different architecture.
pub fn fine_tune(
    checkpoint: &Path,
    expected: &NetworkConfig,
    train_set: &[AnnotatedSample],
    val_set: &[AnnotatedSample],
    config: TrainConfig,
) -> Result<TrainOutcome> {
    let (net, _) = load_checkpoint(checkpoint, Some(expected))?;
    train(net, train_set, val_set, config)
}

#[cfg(test)]
mod tests;
