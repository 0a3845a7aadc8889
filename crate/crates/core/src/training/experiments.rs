use std::path::Path;

use rand::seq::SliceRandom;

use super::{evaluate_prepared, train, PreparedSet, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::rng;
use crate::skeleton::io::csv_error;
use crate::skeleton::{add_gaussian_noise, Dataset};

/// One trained-and-evaluated run of an experiment sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentRow {
    /// The swept value: a data fraction or a noise level.
    pub x: f64,
    pub seed: u64,
    pub top1: f64,
}

/// Keeps `round(fraction · n_k)` clips of every class `k`, chosen by a
/// seeded shuffle, in their original order.
pub fn stratified_subsample(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} not in (0, 1]")));
    }
    let labels = dataset.labels();
    let mut keep = Vec::new();
    for class in 0..dataset.class_count {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let k = (fraction * members.len() as f64).round() as usize;
        if k == 0 {
            return Err(Error::invalid(format!(
                "fraction {fraction} leaves no samples of class {class} ({} available)",
                members.len()
            )));
        }
        members.shuffle(&mut rng::stream(seed, class as u64));
        keep.extend_from_slice(&members[..k]);
    }
    keep.sort_unstable();
    let clips = keep.into_iter().map(|i| dataset.clips[i].clone()).collect();
    Dataset::new(clips, dataset.class_count, dataset.split)
}

fn train_fresh(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &Dataset,
    seed: u64,
) -> Result<Model> {
    let mut model = Model::new(model_cfg.clone(), seed)?;
    let cfg = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    train(&mut model, train_set, None, &cfg)?;
    Ok(model)
}

/// Accuracy on the fixed validation set after training on class-stratified
/// fractions of the training set, for every (fraction, seed) pair.
pub fn run_reduced_data_experiment(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<ExperimentRow>> {
    let mut rows = Vec::new();
    for &fraction in fractions {
        for &seed in seeds {
            let subset = stratified_subsample(train_set, fraction, seed)?;
            let mut model = train_fresh(model_cfg, train_cfg, &subset, seed)?;
            let val = PreparedSet::new(&model, val_set)?;
            let top1 = evaluate_prepared(
                &mut model,
                &val,
                train_cfg.branch_mode,
                train_cfg.batch_size,
            )?
            .top1;
            log::info!("fraction {fraction} seed {seed}: top-1 {top1:.4}");
            rows.push(ExperimentRow {
                x: fraction,
                seed,
                top1,
            });
        }
    }
    Ok(rows)
}

/// Validation clips with Gaussian noise of standard deviation `sigma` on
/// every coordinate; clip `i` uses a noise stream derived from `seed` and `i`.
pub fn noisy_copy(dataset: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    dataset.map_clips(|i, c| add_gaussian_noise(c, sigma, rng::derive_seed(seed, i as u64)))
}

/// Trains once per seed on clean data, then evaluates on noisy copies of
/// the validation set for every `sigma`.
pub fn run_noise_experiment(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    sigmas: &[f64],
    seeds: &[u64],
) -> Result<Vec<ExperimentRow>> {
    if let Some(&bad) = sigmas.iter().find(|&&s| !(s >= 0.0)) {
        return Err(Error::invalid(format!(
            "noise level {bad} must be non-negative"
        )));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut model = train_fresh(model_cfg, train_cfg, train_set, seed)?;
        for &sigma in sigmas {
            let noisy = noisy_copy(val_set, sigma, rng::derive_seed(seed, 0x4e01_5e))?;
            let val = PreparedSet::new(&model, &noisy)?;
            let top1 = evaluate_prepared(
                &mut model,
                &val,
                train_cfg.branch_mode,
                train_cfg.batch_size,
            )?
            .top1;
            log::info!("sigma {sigma} seed {seed}: top-1 {top1:.4}");
            rows.push(ExperimentRow {
                x: sigma,
                seed,
                top1,
            });
        }
    }
    Ok(rows)
}

/// Writes `column,seed,top1` rows.
pub fn write_experiment_csv(path: &Path, column: &str, rows: &[ExperimentRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([column, "seed", "top1"])
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([r.x.to_string(), r.seed.to_string(), r.top1.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Mean `top1` per distinct swept value, in first-seen order.
pub fn mean_by_value(rows: &[ExperimentRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(x, _, _)| *x == r.x) {
            Some(entry) => {
                entry.1 += r.top1;
                entry.2 += 1;
            }
            None => out.push((r.x, r.top1, 1)),
        }
    }
    out.into_iter().map(|(x, s, n)| (x, s / n as f64)).collect()
}
