//! Classification heads on top of the backbone feature map: a global
//! pooling branch and a discriminative segment-selection branch.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, softmax, softmax_row, Dense, Layer, LayerState, Tensor};

pub const DEFAULT_SEGMENTS: usize = 5;
pub const DEFAULT_SELECTED: usize = 3;

/// How a segment's shared-classifier logits become its saliency score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SaliencyMode {
    /// Largest softmax probability.
    #[default]
    Probability,
    /// Largest raw logit.
    Logit,
}

/// Which losses are optimised, and which head parameters train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BranchMode {
    Global,
    Dfl,
    #[default]
    Both,
}

impl std::fmt::Display for BranchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BranchMode::Global => "global",
            BranchMode::Dfl => "dfl",
            BranchMode::Both => "both",
        })
    }
}

impl std::str::FromStr for BranchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(BranchMode::Global),
            "dfl" => Ok(BranchMode::Dfl),
            "both" => Ok(BranchMode::Both),
            other => Err(Error::invalid(format!(
                "unknown branch mode {other:?} (expected global, dfl or both)"
            ))),
        }
    }
}

/// Multipliers on the four loss terms; all 1 gives the plain sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub global: f64,
    pub segment: f64,
    pub slot: f64,
    pub aggregate: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            global: 1.0,
            segment: 1.0,
            slot: 1.0,
            aggregate: 1.0,
        }
    }
}

impl LossWeights {
    /// Weights with the terms outside `mode` switched off.
    pub fn for_mode(self, mode: BranchMode) -> Self {
        match mode {
            BranchMode::Both => self,
            BranchMode::Global => LossWeights {
                segment: 0.0,
                slot: 0.0,
                aggregate: 0.0,
                ..self
            },
            BranchMode::Dfl => LossWeights {
                global: 0.0,
                ..self
            },
        }
    }
}

/// The four loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub global: f64,
    pub segment: f64,
    pub slot: f64,
    pub aggregate: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        total_loss(self.global, self.segment, self.slot, self.aggregate)
    }

    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.global * self.global
            + w.segment * self.segment
            + w.slot * self.slot
            + w.aggregate * self.aggregate
    }
}

pub fn total_loss(global: f64, segment: f64, slot: f64, aggregate: f64) -> f64 {
    global + segment + slot + aggregate
}

fn check_feature_map(f: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if f.ndim() != 4 {
        return Err(Error::shape("feature map", f.shape(), &[0, 0, 0, 0]));
    }
    Ok((f.dim(0), f.dim(1), f.dim(2), f.dim(3)))
}

/// Mean over time and joints: `[B × C × T × V] → [B × C]`.
pub fn global_average_pool(f: &Tensor) -> Result<Tensor> {
    let (b, c, t, v) = check_feature_map(f)?;
    let inner = t * v;
    let data = f
        .data()
        .chunks_exact(inner)
        .map(|chunk| chunk.iter().sum::<f64>() / inner as f64)
        .collect();
    Tensor::new(vec![b, c], data)
}

pub fn global_average_pool_backward(grad: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let inner: usize = shape[2..].iter().product();
    if grad.shape() != [shape[0], shape[1]] {
        return Err(Error::shape("pool backward", grad.shape(), &shape[..2]));
    }
    let mut out = Vec::with_capacity(grad.len() * inner);
    for &g in grad.data() {
        out.extend(std::iter::repeat_n(g / inner as f64, inner));
    }
    Tensor::new(shape.to_vec(), out)
}

/// Contiguous frame ranges of `n` segments over `frames` frames; the first
/// `frames mod n` segments get one extra frame.
pub fn segment_bounds(frames: usize, n: usize) -> Result<Vec<Range<usize>>> {
    if n == 0 || frames < n {
        return Err(Error::invalid(format!(
            "cannot split {frames} frames into {n} segments"
        )));
    }
    let (base, extra) = (frames / n, frames % n);
    let mut start = 0;
    Ok((0..n)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Mean over each segment's frames and all joints: `[B × C × T × V] → [B × N × C]`.
pub fn segment_and_pool(f: &Tensor, n: usize) -> Result<Tensor> {
    let (b, c, t, v) = check_feature_map(f)?;
    let bounds = segment_bounds(t, n)?;
    let x = f.data();
    let mut out = vec![0.0; b * n * c];
    for bi in 0..b {
        for ci in 0..c {
            let plane = &x[(bi * c + ci) * t * v..][..t * v];
            for (si, r) in bounds.iter().enumerate() {
                let s: f64 = plane[r.start * v..r.end * v].iter().sum();
                out[(bi * n + si) * c + ci] = s / (r.len() * v) as f64;
            }
        }
    }
    Tensor::new(vec![b, n, c], out)
}

pub fn segment_and_pool_backward(grad: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let (b, c, t, v) = (shape[0], shape[1], shape[2], shape[3]);
    if grad.ndim() != 3 || grad.dim(0) != b || grad.dim(2) != c {
        return Err(Error::shape(
            "segment pool backward",
            grad.shape(),
            &[b, 0, c],
        ));
    }
    let n = grad.dim(1);
    let bounds = segment_bounds(t, n)?;
    let g = grad.data();
    let mut out = vec![0.0; b * c * t * v];
    for bi in 0..b {
        for ci in 0..c {
            let plane = &mut out[(bi * c + ci) * t * v..][..t * v];
            for (si, r) in bounds.iter().enumerate() {
                let share = g[(bi * n + si) * c + ci] / (r.len() * v) as f64;
                plane[r.start * v..r.end * v].fill(share);
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Saliency of each segment from its logits `[B × N × c] → [B × N]`.
pub fn saliency_scores(segment_logits: &Tensor, mode: SaliencyMode) -> Result<Tensor> {
    if segment_logits.ndim() != 3 {
        return Err(Error::shape("saliency", segment_logits.shape(), &[0, 0, 0]));
    }
    let (b, n, c) = (
        segment_logits.dim(0),
        segment_logits.dim(1),
        segment_logits.dim(2),
    );
    let data = segment_logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let values = match mode {
                SaliencyMode::Probability => softmax_row(row),
                SaliencyMode::Logit => row.to_vec(),
            };
            values.into_iter().fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Tensor::new(vec![b, n], data)
}

/// Indices of the `d` highest scores, ties toward the smaller index,
/// returned in ascending order.
pub fn select_top(scores: &[f64], d: usize) -> Result<Vec<usize>> {
    if d > scores.len() {
        return Err(Error::invalid(format!(
            "cannot select {d} of {} segments",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut chosen = order[..d].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// `0.5 · (softmax(global) + softmax(aggregate))` row by row.
pub fn fuse_inference(global_logits: &Tensor, aggregate_logits: &Tensor) -> Result<Tensor> {
    if global_logits.shape() != aggregate_logits.shape() || global_logits.ndim() != 2 {
        return Err(Error::shape(
            "fusion",
            global_logits.shape(),
            aggregate_logits.shape(),
        ));
    }
    let c = global_logits.dim(1);
    let mut out = Vec::with_capacity(global_logits.len());
    for (g, a) in global_logits
        .data()
        .chunks_exact(c)
        .zip(aggregate_logits.data().chunks_exact(c))
    {
        let (pg, pa) = (softmax_row(g), softmax_row(a));
        out.extend(pg.iter().zip(&pa).map(|(x, y)| 0.5 * (x + y)));
    }
    Tensor::new(global_logits.shape().to_vec(), out)
}

/// Class probabilities `[B × c]` of one branch, or of their fusion.
pub fn branch_probabilities(out: &HeadOutput, fusion: BranchMode) -> Result<Tensor> {
    match fusion {
        BranchMode::Global => softmax(&out.global_logits, 1),
        BranchMode::Dfl => softmax(&out.aggregate_logits, 1),
        BranchMode::Both => fuse_inference(&out.global_logits, &out.aggregate_logits),
    }
}

/// Everything the heads computed for one batch.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// `[B × c]`
    pub global_logits: Tensor,
    /// `[B × N × C']`
    pub segment_features: Tensor,
    /// `[B × N × c]`
    pub segment_logits: Tensor,
    /// `[B × N]`
    pub saliency: Tensor,
    /// Per sample, `D` strictly increasing segment indices.
    pub selected: Vec<Vec<usize>>,
    /// `[B × D × c]`
    pub slot_logits: Tensor,
    /// `[B × c]`
    pub aggregate_logits: Tensor,
}

/// Gradients of the four losses with respect to each head output.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub global_logits: Option<Tensor>,
    pub segment_logits: Option<Tensor>,
    /// One `[B × c]` gradient per slot.
    pub slot_logits: Option<Vec<Tensor>>,
}

#[derive(Debug, Clone)]
pub struct Heads {
    classes: usize,
    segments: usize,
    selected: usize,
    saliency: SaliencyMode,
    global_fc: Dense,
    shared: Dense,
    slots: Vec<Dense>,
    feature_shape: Option<Vec<usize>>,
    selection: Vec<Vec<usize>>,
}

impl Heads {
    pub fn new<R: Rng + ?Sized>(
        channels: usize,
        classes: usize,
        segments: usize,
        selected: usize,
        saliency: SaliencyMode,
        rng: &mut R,
    ) -> Result<Self> {
        if selected == 0 || selected > segments {
            return Err(Error::invalid(format!(
                "selected count {selected} must be between 1 and the segment count {segments}"
            )));
        }
        if classes < 2 {
            return Err(Error::invalid("at least two classes are required"));
        }
        let global_fc = Dense::new("global_fc", channels, classes, rng);
        let shared = Dense::new("shared", channels, classes, rng);
        let slots = (0..selected)
            .map(|m| Dense::new(&format!("slot{m}"), channels, classes, rng))
            .collect();
        Ok(Heads {
            classes,
            segments,
            selected,
            saliency,
            global_fc,
            shared,
            slots,
            feature_shape: None,
            selection: Vec::new(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Runs both branches. With `frozen` the given indices replace the
    /// saliency ranking, which is still computed and reported.
    pub fn forward(&mut self, f: &Tensor, frozen: Option<&[Vec<usize>]>) -> Result<HeadOutput> {
        let (b, c, _, _) = check_feature_map(f)?;
        let (n, d, k) = (self.segments, self.selected, self.classes);
        let pooled = global_average_pool(f)?;
        let global_logits = self.global_fc.forward(&pooled)?;

        let segment_features = segment_and_pool(f, n)?;
        let flat = segment_features.clone().reshape(&[b * n, c])?;
        let segment_logits = self.shared.forward(&flat)?.reshape(&[b, n, k])?;
        let saliency = saliency_scores(&segment_logits, self.saliency)?;

        let selected: Vec<Vec<usize>> = match frozen {
            Some(sel) => {
                if sel.len() != b
                    || sel
                        .iter()
                        .any(|s| s.len() != d || s.iter().any(|&i| i >= n))
                {
                    return Err(Error::invalid("frozen selection does not match the batch"));
                }
                sel.to_vec()
            }
            None => saliency
                .data()
                .chunks_exact(n)
                .map(|row| select_top(row, d))
                .collect::<Result<_>>()?,
        };

        let sf = segment_features.data();
        let mut slot_logits = vec![0.0; b * d * k];
        let mut aggregate = vec![0.0; b * k];
        for (m, slot) in self.slots.iter_mut().enumerate() {
            let mut gathered = Vec::with_capacity(b * c);
            for (bi, sel) in selected.iter().enumerate() {
                gathered.extend_from_slice(&sf[(bi * n + sel[m]) * c..][..c]);
            }
            let logits = slot.forward(&Tensor::new(vec![b, c], gathered)?)?;
            for bi in 0..b {
                let row = &logits.data()[bi * k..][..k];
                slot_logits[(bi * d + m) * k..][..k].copy_from_slice(row);
                for (a, y) in aggregate[bi * k..][..k].iter_mut().zip(row) {
                    *a += y;
                }
            }
        }
        self.feature_shape = Some(f.shape().to_vec());
        self.selection = selected.clone();
        Ok(HeadOutput {
            global_logits,
            segment_features,
            segment_logits,
            saliency,
            selected,
            slot_logits: Tensor::new(vec![b, d, k], slot_logits)?,
            aggregate_logits: Tensor::new(vec![b, k], aggregate)?,
        })
    }

    /// Loss values and their logit gradients, scaled by `weights`. Terms
    /// with zero weight get no gradient.
    pub fn losses(
        &self,
        out: &HeadOutput,
        labels: &[usize],
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, HeadGradients)> {
        let (b, n, d, k) = (labels.len(), self.segments, self.selected, self.classes);
        let global = cross_entropy(&out.global_logits, labels)?;

        let repeated: Vec<usize> = labels
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l, n))
            .collect();
        let segment = cross_entropy(&out.segment_logits.clone().reshape(&[b * n, k])?, &repeated)?;

        let aggregate = cross_entropy(&out.aggregate_logits, labels)?;
        let mut slot_loss = 0.0;
        let mut slot_grads = Vec::with_capacity(d);
        for m in 0..d {
            let mut rows = Vec::with_capacity(b * k);
            for bi in 0..b {
                rows.extend_from_slice(&out.slot_logits.data()[(bi * d + m) * k..][..k]);
            }
            let ce = cross_entropy(&Tensor::new(vec![b, k], rows)?, labels)?;
            slot_loss += ce.loss / d as f64;
            let mut g = ce.grad.scale(weights.slot / d as f64);
            g.add_assign(&aggregate.grad.scale(weights.aggregate))?;
            slot_grads.push(g);
        }

        let breakdown = LossBreakdown {
            global: global.loss,
            segment: segment.loss,
            slot: slot_loss,
            aggregate: aggregate.loss,
        };
        let slots_active = weights.slot != 0.0 || weights.aggregate != 0.0;
        let grads = HeadGradients {
            global_logits: (weights.global != 0.0).then(|| global.grad.scale(weights.global)),
            segment_logits: (weights.segment != 0.0)
                .then(|| segment.grad.scale(weights.segment).reshape(&[b, n, k]))
                .transpose()?,
            slot_logits: slots_active.then_some(slot_grads),
        };
        Ok((breakdown, grads))
    }

    /// Routes logit gradients back to the feature map `[B × C' × T' × V]`.
    /// Slot gradients reach only the selected segments.
    pub fn backward(&mut self, grads: &HeadGradients) -> Result<Tensor> {
        let shape = self
            .feature_shape
            .clone()
            .ok_or_else(|| crate::nn::layer::missing_forward("heads"))?;
        let (b, c) = (shape[0], shape[1]);
        let (n, k) = (self.segments, self.classes);
        let mut df = Tensor::zeros(&shape);
        if let Some(g) = &grads.global_logits {
            let dp = self.global_fc.backward(g)?;
            df.add_assign(&global_average_pool_backward(&dp, &shape)?)?;
        }
        let mut ds = vec![0.0; b * n * c];
        let mut any_segment = false;
        if let Some(g) = &grads.segment_logits {
            let dflat = self.shared.backward(&g.clone().reshape(&[b * n, k])?)?;
            ds.iter_mut().zip(dflat.data()).for_each(|(a, x)| *a += x);
            any_segment = true;
        }
        if let Some(gs) = &grads.slot_logits {
            for (m, (slot, g)) in self.slots.iter_mut().zip(gs).enumerate() {
                let dfeat = slot.backward(g)?;
                for (bi, sel) in self.selection.iter().enumerate() {
                    let dst = &mut ds[(bi * n + sel[m]) * c..][..c];
                    for (a, x) in dst.iter_mut().zip(&dfeat.data()[bi * c..][..c]) {
                        *a += x;
                    }
                }
            }
            any_segment = true;
        }
        if any_segment {
            let ds = Tensor::new(vec![b, n, c], ds)?;
            df.add_assign(&segment_and_pool_backward(&ds, &shape)?)?;
        }
        Ok(df)
    }

    pub fn visit_states(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut LayerState)) {
        let p = crate::nn::join_path(prefix, "heads");
        self.global_fc.visit_states(&p, f);
        self.shared.visit_states(&p, f);
        for s in &mut self.slots {
            s.visit_states(&p, f);
        }
    }
}

/// Whether the head parameter at `path` trains under `mode`.
pub fn trains_under(path: &str, mode: BranchMode) -> bool {
    let is_global = path.ends_with("heads.global_fc");
    let is_dfl = path.contains("heads.shared") || path.contains("heads.slot");
    match mode {
        BranchMode::Both => true,
        BranchMode::Global => !is_dfl,
        BranchMode::Dfl => !is_global,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn ramp(shape: &[usize], step: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|i| (i as f64 * step).sin()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn segment_bounds_remainder_rule() {
        let even: Vec<_> = segment_bounds(20, 5)
            .unwrap()
            .into_iter()
            .map(|r| r.start)
            .collect();
        assert_eq!(even, vec![0, 4, 8, 12, 16]);
        let lens: Vec<_> = segment_bounds(23, 5)
            .unwrap()
            .into_iter()
            .map(|r| r.len())
            .collect();
        assert_eq!(lens, vec![5, 5, 5, 4, 4]);
        assert!(segment_bounds(4, 5).is_err());
    }

    #[test]
    fn global_pool_matches_double_loop() {
        let f = ramp(&[2, 3, 4, 5], 0.37);
        let p = global_average_pool(&f).unwrap();
        for b in 0..2 {
            for c in 0..3 {
                let mut s = 0.0;
                for t in 0..4 {
                    for v in 0..5 {
                        s += f.get(&[b, c, t, v]);
                    }
                }
                assert!((p.get(&[b, c]) - s / 20.0).abs() < 1e-12);
            }
        }
        let constant = global_average_pool(&Tensor::full(&[1, 2, 3, 4], 0.7)).unwrap();
        assert!(constant.data().iter().all(|&x| (x - 0.7).abs() < 1e-15));
    }

    #[test]
    fn weighted_segment_means_recover_global_mean() {
        let f = ramp(&[2, 3, 23, 4], 0.11);
        let s = segment_and_pool(&f, 5).unwrap();
        let g = global_average_pool(&f).unwrap();
        let lens: Vec<f64> = segment_bounds(23, 5)
            .unwrap()
            .iter()
            .map(|r| r.len() as f64)
            .collect();
        for b in 0..2 {
            for c in 0..3 {
                let m: f64 = (0..5).map(|i| lens[i] * s.get(&[b, i, c])).sum::<f64>() / 23.0;
                assert!((m - g.get(&[b, c])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooling_backward_is_adjoint() {
        let shape = [2, 3, 7, 4];
        let f = ramp(&shape, 0.3);
        let g = ramp(&[2, 3, 3], 0.9);
        let lhs: f64 = segment_and_pool(&f, 3).unwrap().mul(&g).unwrap().sum();
        let rhs: f64 = segment_and_pool_backward(&g, &shape)
            .unwrap()
            .mul(&f)
            .unwrap()
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let gg = ramp(&[2, 3], 0.5);
        let lhs: f64 = global_average_pool(&f).unwrap().mul(&gg).unwrap().sum();
        let rhs: f64 = global_average_pool_backward(&gg, &shape)
            .unwrap()
            .mul(&f)
            .unwrap()
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn selection_examples() {
        assert_eq!(
            select_top(&[0.9, 0.2, 0.8, 0.7, 0.1], 3).unwrap(),
            vec![0, 2, 3]
        );
        assert_eq!(select_top(&[0.5; 5], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_top(&[0.1, 0.3, 0.3, 0.3], 2).unwrap(), vec![1, 2]);
        assert!(select_top(&[0.1], 2).is_err());
    }

    #[test]
    fn saliency_modes() {
        let logits = Tensor::new(vec![1, 2, 2], vec![0.0, 0.0, 3.0, 1.0]).unwrap();
        let p = saliency_scores(&logits, SaliencyMode::Probability).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-15);
        assert!((p.data()[1] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        let l = saliency_scores(&logits, SaliencyMode::Logit).unwrap();
        assert_eq!(l.data(), &[0.0, 3.0]);
    }

    #[test]
    fn fusion_of_equal_logits_is_softmax() {
        let g = ramp(&[3, 4], 1.3);
        let fused = fuse_inference(&g, &g).unwrap();
        for r in 0..3 {
            let sm = softmax_row(&g.data()[r * 4..][..4]);
            let row = &fused.data()[r * 4..][..4];
            for (a, b) in row.iter().zip(&sm) {
                assert!((a - b).abs() < 1e-15);
            }
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn zero_heads(classes: usize, n: usize, d: usize) -> Heads {
        let mut h = Heads::new(
            3,
            classes,
            n,
            d,
            SaliencyMode::Probability,
            &mut rng::rng(0),
        )
        .unwrap();
        h.visit_states("", &mut |_, s| {
            s.params.values_mut().for_each(|p| p.fill(0.0))
        });
        h
    }

    #[test]
    fn zero_logits_give_four_log_c() {
        let mut h = zero_heads(7, 5, 3);
        let out = h.forward(&ramp(&[2, 3, 10, 4], 0.2), None).unwrap();
        let (l, _) = h.losses(&out, &[1, 6], &LossWeights::default()).unwrap();
        assert!((l.total() - 4.0 * 7f64.ln()).abs() < 1e-12);
        assert_eq!(out.selected, vec![vec![0, 1, 2], vec![0, 1, 2]]);
    }

    #[test]
    fn slot_biases_sum_into_aggregate() {
        let mut h = zero_heads(4, 5, 3);
        for (m, slot) in h.slots.iter_mut().enumerate() {
            slot.state_mut().param_mut("bias").fill(m as f64 + 1.0);
        }
        let out = h.forward(&ramp(&[2, 3, 10, 4], 0.2), None).unwrap();
        assert!(out.aggregate_logits.data().iter().all(|&x| x == 6.0));
    }

    #[test]
    fn single_slot_aggregate_equals_slot() {
        let mut h = Heads::new(3, 4, 1, 1, SaliencyMode::Probability, &mut rng::rng(3)).unwrap();
        let out = h.forward(&ramp(&[2, 3, 6, 4], 0.4), None).unwrap();
        assert_eq!(out.aggregate_logits.data(), out.slot_logits.data());
        let (l, _) = h.losses(&out, &[0, 3], &LossWeights::default()).unwrap();
        assert!((l.slot - l.aggregate).abs() < 1e-15);
    }

    #[test]
    fn unselected_segments_get_no_slot_gradient() {
        let mut h = Heads::new(3, 4, 5, 2, SaliencyMode::Probability, &mut rng::rng(3)).unwrap();
        let f = ramp(&[1, 3, 10, 4], 0.4);
        let out = h.forward(&f, None).unwrap();
        let weights = LossWeights {
            global: 0.0,
            segment: 0.0,
            ..LossWeights::default()
        };
        let (_, grads) = h.losses(&out, &[2], &weights).unwrap();
        let df = h.backward(&grads).unwrap();
        let bounds = segment_bounds(10, 5).unwrap();
        for (i, r) in bounds.iter().enumerate() {
            let touched = (0..3).any(|c| {
                r.clone()
                    .any(|t| (0..4).any(|v| df.get(&[0, c, t, v]) != 0.0))
            });
            assert_eq!(touched, out.selected[0].contains(&i), "segment {i}");
        }
    }

    #[test]
    fn branch_filters() {
        assert!(trains_under("heads.global_fc", BranchMode::Global));
        assert!(!trains_under("heads.slot1", BranchMode::Global));
        assert!(!trains_under("heads.global_fc", BranchMode::Dfl));
        assert!(trains_under("backbone.block0.gcn", BranchMode::Dfl));
        assert!(trains_under("heads.shared", BranchMode::Both));
    }
}
