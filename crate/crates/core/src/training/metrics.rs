use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::skeleton::io::csv_error;

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub lg: f64,
    pub ls: f64,
    pub ld: f64,
    pub la: f64,
    pub train_top1: f64,
    pub val_top1: f64,
    pub val_top5: f64,
    pub seconds: f64,
}

impl MetricsRecord {
    pub fn total_loss(&self) -> f64 {
        self.lg + self.ls + self.ld + self.la
    }
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))
}

/// Position of `label` when classes are ranked by probability, ties going
/// to the smaller class index.
fn rank_of(row: &[f64], label: usize) -> usize {
    let p = row[label];
    row.iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < label))
        .count()
}

/// Number of rows whose label ranks among the top `k` classes.
pub fn top_k_hits(probs: &Tensor, labels: &[usize], k: usize) -> usize {
    let c = probs.dim(1);
    probs
        .data()
        .chunks_exact(c)
        .zip(labels)
        .filter(|(row, &l)| rank_of(row, l) < k)
        .count()
}

/// Accuracy summary with a confusion matrix indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    pub confusion: Vec<Vec<usize>>,
    pub samples: usize,
    hits5: usize,
}

impl EvalReport {
    pub fn new(classes: usize) -> Self {
        EvalReport {
            top1: 0.0,
            top5: 0.0,
            confusion: vec![vec![0; classes]; classes],
            samples: 0,
            hits5: 0,
        }
    }

    pub fn add_batch(&mut self, probs: &Tensor, labels: &[usize]) -> Result<()> {
        let c = self.confusion.len();
        if probs.ndim() != 2 || probs.dim(1) != c || probs.dim(0) != labels.len() {
            return Err(Error::shape(
                "evaluation batch",
                probs.shape(),
                &[labels.len(), c],
            ));
        }
        for (row, &l) in probs.data().chunks_exact(c).zip(labels) {
            if l >= c {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: c,
                });
            }
            let predicted = (0..c).find(|&j| rank_of(row, j) == 0).unwrap_or(0);
            self.confusion[l][predicted] += 1;
        }
        self.hits5 += top_k_hits(probs, labels, 5);
        self.samples += labels.len();
        Ok(())
    }

    pub fn finish(&mut self) {
        let n = self.samples.max(1) as f64;
        let correct: usize = (0..self.confusion.len())
            .map(|i| self.confusion[i][i])
            .sum();
        self.top1 = correct as f64 / n;
        self.top5 = self.hits5 as f64 / n;
    }
}

pub fn write_confusion_csv(path: &Path, confusion: &[Vec<usize>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["true".to_string()];
    header.extend((0..confusion.len()).map(|j| format!("pred{j}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, row) in confusion.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(usize::to_string));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}
