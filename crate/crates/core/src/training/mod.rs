//! Mini-batch training with the stepped learning-rate schedule, evaluation
//! metrics, and the robustness experiment runners.

mod experiments;
mod metrics;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use experiments::{
    mean_by_value, noisy_copy, run_noise_experiment, run_reduced_data_experiment,
    stratified_subsample, write_experiment_csv, ExperimentRow,
};
pub use metrics::{
    read_metrics_csv, write_confusion_csv, write_metrics_csv, EvalReport, MetricsRecord,
};

use crate::error::{Error, Result};
use crate::heads::{branch_probabilities, BranchMode};
use crate::model::Model;
use crate::nn::{Mode, SgdNesterov, Tensor};
use crate::rng;
use crate::skeleton::{augment_translate_rotate, AugmentParams, Dataset, SkeletonClip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub branch_mode: BranchMode,
    /// Random rotation about the vertical axis and translation per clip and epoch.
    pub augment: bool,
    /// Record elapsed seconds in the metrics; off keeps metrics bitwise reproducible.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 16,
            lr0: 0.1,
            lr_drop_epochs: vec![30, 45],
            lr_drop_factor: 10.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            branch_mode: BranchMode::Both,
            augment: false,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    /// 120 epochs, batch 64, drops at 60 and 90.
    pub fn full_schedule() -> Self {
        TrainConfig {
            epochs: 120,
            batch_size: 64,
            lr_drop_epochs: vec![60, 90],
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if let Some(&e) = self.lr_drop_epochs.iter().find(|&&e| e >= self.epochs) {
            return Err(Error::invalid(format!(
                "learning-rate drop at epoch {e} is not before the last epoch {}",
                self.epochs
            )));
        }
        if self.lr_drop_factor <= 1.0 {
            return Err(Error::invalid("learning-rate drop factor must exceed 1"));
        }
        if !(self.lr0 > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::invalid(
                "lr0 must be positive, momentum in [0, 1), weight decay non-negative",
            ));
        }
        Ok(())
    }

    /// Learning rate in effect during zero-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr0 / self.lr_drop_factor.powi(drops as i32)
    }
}

/// Prepared network inputs and labels for a whole dataset.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl PreparedSet {
    pub fn new(model: &Model, dataset: &Dataset) -> Result<Self> {
        let inputs = dataset
            .clips
            .iter()
            .map(|c| model.prepare_clip(c).map(|p| p.to_channels_first()))
            .collect::<Result<_>>()?;
        Ok(PreparedSet {
            inputs,
            labels: dataset.labels(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = Tensor::stack(&indices.iter().map(|&i| &self.inputs[i]).collect::<Vec<_>>())?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

fn augmented_inputs(
    model: &Model,
    clips: &[SkeletonClip],
    seed: u64,
    epoch: usize,
) -> Result<Vec<Tensor>> {
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let s = rng::derive_seed(rng::derive_seed(seed, epoch as u64 + 1), i as u64);
            let (moved, _) = augment_translate_rotate(c, s, AugmentParams::default())?;
            model.prepare_clip(&moved).map(|p| p.to_channels_first())
        })
        .collect()
}

/// Trains `model` in place and returns one metrics record per epoch.
///
/// With a validation set, validation accuracy is measured after every
/// epoch using the fusion that matches the branch mode.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<Vec<MetricsRecord>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    let classes = model.config().classes;
    if let Some(&bad) = train_set.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let mut prepared = PreparedSet::new(model, train_set)?;
    let val = val_set.map(|v| PreparedSet::new(model, v)).transpose()?;
    let mut optimizer = SgdNesterov::new(config.lr0, config.momentum, config.weight_decay)?;
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut shuffle_rng = rng::stream(config.seed, 0x5348_5546);
    let started = Instant::now();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.augment {
            prepared.inputs = augmented_inputs(model, &train_set.clips, config.seed, epoch)?;
        }
        optimizer.learning_rate = config.lr_at(epoch);
        model.set_mode(Mode::Train);
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0; 4];
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (x, labels) = prepared.batch(chunk)?;
            model.zero_grads();
            let (losses, out) = model.compute_gradients(&x, &labels, config.branch_mode)?;
            let w = chunk.len() as f64;
            for (s, l) in
                sums.iter_mut()
                    .zip([losses.global, losses.segment, losses.slot, losses.aggregate])
            {
                *s += w * l;
            }
            if !losses.total().is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            let probs = branch_probabilities(&out, config.branch_mode)?;
            correct += metrics::top_k_hits(&probs, &labels, 1);
            let mode = config.branch_mode;
            model.visit_trainable(mode, &mut |path, state| optimizer.step(path, state));
        }
        let n = prepared.len() as f64;
        let (val_top1, val_top5) = match &val {
            Some(v) => {
                let r = evaluate_prepared(model, v, config.branch_mode, config.batch_size)?;
                (r.top1, r.top5)
            }
            None => (f64::NAN, f64::NAN),
        };
        let record = MetricsRecord {
            epoch: epoch + 1,
            lg: sums[0] / n,
            ls: sums[1] / n,
            ld: sums[2] / n,
            la: sums[3] / n,
            train_top1: correct as f64 / n,
            val_top1,
            val_top5,
            seconds: if config.wall_clock {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        log::info!(
            "epoch {:>3} lr {:.4} loss {:.4} train {:.3} val {:.3}",
            record.epoch,
            optimizer.learning_rate,
            record.lg + record.ls + record.ld + record.la,
            record.train_top1,
            record.val_top1
        );
        records.push(record);
    }
    model.set_mode(Mode::Eval);
    Ok(records)
}

/// Eval-mode accuracy of `model` on a prepared set.
pub fn evaluate_prepared(
    model: &mut Model,
    set: &PreparedSet,
    fusion: BranchMode,
    batch_size: usize,
) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let previous = {
        let mut m = Mode::Eval;
        model.visit_states(&mut |_, s| m = s.mode);
        m
    };
    model.set_mode(Mode::Eval);
    let classes = model.config().classes;
    let mut report = EvalReport::new(classes);
    let indices: Vec<usize> = (0..set.len()).collect();
    let result: Result<()> = (|| {
        for chunk in indices.chunks(batch_size.max(1)) {
            let (x, labels) = set.batch(chunk)?;
            let probs = model.predict(&x, fusion)?;
            report.add_batch(&probs, &labels)?;
        }
        Ok(())
    })();
    model.set_mode(previous);
    result?;
    report.finish();
    Ok(report)
}

pub fn evaluate(model: &mut Model, dataset: &Dataset, fusion: BranchMode) -> Result<EvalReport> {
    let prepared = PreparedSet::new(model, dataset)?;
    evaluate_prepared(model, &prepared, fusion, 32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stepped_schedule() {
        let cfg = TrainConfig::full_schedule();
        assert_eq!(cfg.lr_at(0), 0.1);
        assert_eq!(cfg.lr_at(59), 0.1);
        assert!((cfg.lr_at(60) - 0.01).abs() < 1e-15);
        assert!((cfg.lr_at(90) - 0.001).abs() < 1e-15);
        let desk = TrainConfig::default();
        assert!((desk.lr_at(30) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = TrainConfig::default();
        cfg.lr_drop_epochs = vec![60];
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.lr_drop_factor = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }
}
