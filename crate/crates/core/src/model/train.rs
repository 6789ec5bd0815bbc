//! Mini-batch training with Adam, halving-on-plateau scheduling, and
//! best-on-dev model selection.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::metrics::SwitchLabel;

use super::{adam_step, bce_loss, forward_batch, grad, AdamState, ModelParams};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Epochs without dev-loss improvement before the learning rate halves.
    pub plateau_epochs: usize,
    pub lr_factor: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-4,
            plateau_epochs: 5,
            lr_factor: 0.5,
            max_epochs: 50,
            batch_size: 32,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_lr <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::invalid("lr_factor must lie in (0, 1)"));
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.plateau_epochs == 0 {
            return Err(Error::invalid(
                "epochs, batch size, and plateau length must be positive",
            ));
        }
        Ok(())
    }
}

/// One labeled training utterance with extracted paired features.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub utt_id: String,
    pub features: FeatureMatrix,
    pub label: SwitchLabel,
}

/// Halving-on-plateau schedule: the learning rate halves once the dev loss
/// has failed to improve on the best seen value for `plateau_epochs`
/// consecutive epochs. The stall counter resets on improvement and on each
/// halving; the best-seen loss never resets.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    plateau_epochs: usize,
    factor: f64,
    best: f64,
    stalled: usize,
}

impl PlateauScheduler {
    pub fn new(plateau_epochs: usize, factor: f64) -> Self {
        PlateauScheduler {
            plateau_epochs,
            factor,
            best: f64::INFINITY,
            stalled: 0,
        }
    }

    /// Feeds one epoch's dev loss; scales `lr` in place when a plateau is
    /// detected. Returns true when a halving happened this epoch.
    pub fn observe(&mut self, dev_loss: f64, lr: &mut f64) -> bool {
        if dev_loss < self.best {
            self.best = dev_loss;
            self.stalled = 0;
            return false;
        }
        self.stalled += 1;
        if self.stalled >= self.plateau_epochs {
            *lr *= self.factor;
            self.stalled = 0;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub log: Vec<EpochLog>,
}

/// Dev-set mean BCE loss and hard-decision accuracy.
pub fn evaluate_dev(params: &ModelParams, dev: &[TrainExample]) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in dev.chunks(64) {
        let feats: Vec<&FeatureMatrix> = chunk.iter().map(|e| &e.features).collect();
        let posteriors = forward_batch(params, &feats)?;
        for (ex, p) in chunk.iter().zip(&posteriors) {
            loss_sum += bce_loss(p, &ex.label);
            let predicted = usize::from(!(p.p0 > p.p1));
            if predicted == ex.label.class() {
                correct += 1;
            }
        }
    }
    Ok((
        loss_sum / dev.len() as f64,
        correct as f64 / dev.len() as f64,
    ))
}

/// Trains the switch model and returns the parameters from the epoch with
/// the lowest dev loss. Tie-labeled examples are dropped up front.
pub fn train(
    train_set: &[TrainExample],
    dev_set: &[TrainExample],
    initial: ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set: Vec<&TrainExample> = train_set.iter().filter(|e| !e.label.tie).collect();
    if train_set.is_empty() {
        return Err(Error::invalid(
            "training set is empty after tie filtering",
        ));
    }
    if dev_set.is_empty() {
        return Err(Error::invalid("development set is empty"));
    }

    let mut params = initial;
    let mut adam = AdamState::new(&params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut scheduler = PlateauScheduler::new(cfg.plateau_epochs, cfg.lr_factor);
    let mut lr = cfg.initial_lr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut log = Vec::with_capacity(cfg.max_epochs);
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let epoch_lr = lr;
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // Per-utterance gradients in parallel; the reduction below runs
            // in fixed utterance order so results do not depend on the
            // worker count.
            let results: Vec<(f64, ModelParams)> = batch
                .par_iter()
                .map(|idx| {
                    let ex = train_set[*idx];
                    grad(&params, &ex.features, &ex.label)
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut batch_grad = params.zeros_like();
            for (loss, g) in &results {
                loss_sum += *loss;
                batch_grad.add_scaled(g, scale);
            }
            adam_step(&mut params, &batch_grad, &mut adam, epoch_lr);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (dev_loss, dev_acc) = evaluate_dev(&params, dev_set)?;
        scheduler.observe(dev_loss, &mut lr);
        log.push(EpochLog {
            epoch,
            lr: epoch_lr,
            train_loss,
            dev_loss,
            dev_acc,
        });
        let improved = best.as_ref().map_or(true, |(_, l, _)| dev_loss < *l);
        if improved {
            best = Some((epoch, dev_loss, params.clone()));
        }
    }
    let (best_epoch, best_dev_loss, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        best_epoch,
        best_dev_loss,
        log,
    })
}

/// Writes the per-epoch log: tab-separated epoch, lr, train loss, dev loss,
/// dev accuracy.
pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch\tlr\ttrain_loss\tdev_loss\tdev_acc\n");
    for e in log {
        out.push_str(&format!(
            "{}\t{:.6e}\t{:.8}\t{:.8}\t{:.6}\n",
            e.epoch, e.lr, e.train_loss, e.dev_loss, e.dev_acc
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
