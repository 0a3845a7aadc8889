//! The complete network: input preparation, backbone, both heads, and
//! checkpoint persistence.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::dif::apply_dif;
use crate::error::{Error, Result};
use crate::graph::{build_graph, SkeletonGraph};
use crate::heads::{
    branch_probabilities, trains_under, BranchMode, HeadGradients, HeadOutput, Heads,
    LossBreakdown, LossWeights, SaliencyMode, DEFAULT_SEGMENTS, DEFAULT_SELECTED,
};
use crate::nn::{Layer, LayerState, Mode, Objective, Tensor};
use crate::rng;
use crate::skeleton::ops::DEFAULT_FRAMES;
use crate::skeleton::{resample_uniform, SkeletonClip, SkeletonTopology};

pub const CHECKPOINT_FORMAT: &str = "skelact-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "SkeletonTopology::ntu25")]
    pub topology: SkeletonTopology,
    #[serde(default)]
    pub backbone: BackboneConfig,
    pub classes: usize,
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[serde(default = "default_selected")]
    pub selected: usize,
    /// Clips are resampled to this many frames before entering the network.
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_true")]
    pub dif: bool,
    #[serde(default)]
    pub saliency: SaliencyMode,
    #[serde(default)]
    pub loss_weights: LossWeights,
}

fn default_segments() -> usize {
    DEFAULT_SEGMENTS
}

fn default_selected() -> usize {
    DEFAULT_SELECTED
}

fn default_frames() -> usize {
    DEFAULT_FRAMES
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(classes: usize) -> Self {
        ModelConfig {
            topology: SkeletonTopology::ntu25(),
            backbone: BackboneConfig::default(),
            classes,
            segments: DEFAULT_SEGMENTS,
            selected: DEFAULT_SELECTED,
            frames: DEFAULT_FRAMES,
            dif: true,
            saliency: SaliencyMode::default(),
            loss_weights: LossWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.backbone.in_channels() != 3 {
            return Err(Error::invalid(format!(
                "the first block must take 3 input channels, got {}",
                self.backbone.in_channels()
            )));
        }
        if self.classes < 2 {
            return Err(Error::invalid("at least two classes are required"));
        }
        if self.selected == 0 || self.selected > self.segments {
            return Err(Error::invalid(format!(
                "selected count {} must be between 1 and the segment count {}",
                self.selected, self.segments
            )));
        }
        if self.frames < 2 {
            return Err(Error::invalid("input clips need at least two frames"));
        }
        let out = self.backbone.output_frames(self.frames);
        if out < self.segments {
            return Err(Error::invalid(format!(
                "{} input frames give {out} feature frames, fewer than {} segments",
                self.frames, self.segments
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct StoredState {
    params: BTreeMap<String, Tensor>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    running_stats: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    states: BTreeMap<String, StoredState>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    graph: Arc<SkeletonGraph>,
    backbone: Backbone,
    heads: Heads,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let graph = Arc::new(build_graph(&config.topology)?);
        let backbone = Backbone::new(
            graph.clone(),
            config.backbone.clone(),
            &mut rng::stream(seed, 1),
        )?;
        let heads = Heads::new(
            config.backbone.out_channels(),
            config.classes,
            config.segments,
            config.selected,
            config.saliency,
            &mut rng::stream(seed, 2),
        )?;
        Ok(Model {
            config,
            graph,
            backbone,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &SkeletonGraph {
        &self.graph
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    /// Applies the input transform (body-local frame when enabled, then
    /// resampling to the configured length).
    pub fn prepare_clip(&self, clip: &SkeletonClip) -> Result<SkeletonClip> {
        if clip.joints() != self.config.topology.joint_count() {
            return Err(Error::shape(
                "clip joints",
                &[clip.joints()],
                &[self.config.topology.joint_count()],
            ));
        }
        let clip = if self.config.dif {
            apply_dif(clip)?
        } else {
            clip.clone()
        };
        if clip.frames() == self.config.frames {
            Ok(clip)
        } else {
            resample_uniform(&clip, self.config.frames)
        }
    }

    /// Prepared clips stacked as `[B × 3 × T × V]`.
    pub fn batch_tensor(&self, clips: &[&SkeletonClip]) -> Result<Tensor> {
        let prepared = clips
            .iter()
            .map(|c| self.prepare_clip(c).map(|p| p.to_channels_first()))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&prepared.iter().collect::<Vec<_>>())
    }

    /// Backbone plus both heads. With `frozen`, the given segment indices
    /// are used instead of the saliency ranking.
    pub fn forward(&mut self, x: &Tensor, frozen: Option<&[Vec<usize>]>) -> Result<HeadOutput> {
        let expected = [3, self.config.frames, self.graph.joints()];
        if x.ndim() != 4 || x.shape()[1..] != expected {
            return Err(Error::shape(
                "model input",
                x.shape(),
                &[0, expected[0], expected[1], expected[2]],
            ));
        }
        let f = self.backbone.forward(x)?;
        self.heads.forward(&f, frozen)
    }

    pub fn losses(
        &self,
        out: &HeadOutput,
        labels: &[usize],
        mode: BranchMode,
    ) -> Result<(LossBreakdown, HeadGradients)> {
        self.heads
            .losses(out, labels, &self.config.loss_weights.for_mode(mode))
    }

    /// Back-propagates head gradients through the network; returns the
    /// gradient with respect to the input batch.
    pub fn backward(&mut self, grads: &HeadGradients) -> Result<Tensor> {
        let df = self.heads.backward(grads)?;
        self.backbone.backward(&df)
    }

    /// Back-propagates a gradient on the backbone output to the input.
    pub fn backward_features(&mut self, grad_features: &Tensor) -> Result<Tensor> {
        self.backbone.backward(grad_features)
    }

    /// Forward, loss and backward for one batch; gradients accumulate.
    pub fn compute_gradients(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        mode: BranchMode,
    ) -> Result<(LossBreakdown, HeadOutput)> {
        let out = self.forward(x, None)?;
        let (losses, grads) = self.losses(&out, labels, mode)?;
        self.backward(&grads)?;
        Ok((losses, out))
    }

    /// Class probabilities `[B × c]` from the chosen branch or their fusion.
    pub fn predict(&mut self, x: &Tensor, fusion: BranchMode) -> Result<Tensor> {
        let out = self.forward(x, None)?;
        branch_probabilities(&out, fusion)
    }

    pub fn visit_states(&mut self, f: &mut dyn FnMut(&str, &mut LayerState)) {
        self.backbone.visit_states("", f);
        self.heads.visit_states("", f);
    }

    /// Visits only the states whose parameters train under `mode`.
    pub fn visit_trainable(&mut self, mode: BranchMode, f: &mut dyn FnMut(&str, &mut LayerState)) {
        self.visit_states(&mut |path, s| {
            if trains_under(path, mode) {
                f(path, s);
            }
        });
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.visit_states(&mut |_, s| s.mode = mode);
    }

    pub fn zero_grads(&mut self) {
        self.visit_states(&mut |_, s| s.zero_grads());
    }

    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_states(&mut |_, s| n += s.num_params());
        n
    }

    pub fn to_checkpoint_json(&mut self) -> Result<String> {
        let mut states = BTreeMap::new();
        self.visit_states(&mut |path, s| {
            if !s.params.is_empty() || !s.running_stats.is_empty() {
                states.insert(
                    path.to_string(),
                    StoredState {
                        params: s.params.clone(),
                        running_stats: s.running_stats.clone(),
                    },
                );
            }
        });
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            states,
        };
        let mut text = serde_json::to_string(&ckpt)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} version {}",
                ckpt.format, ckpt.version
            )));
        }
        let mut model = Model::new(ckpt.config, 0)?;
        let mut stored = ckpt.states;
        let mut problems = Vec::new();
        model.visit_states(&mut |path, s| {
            if s.params.is_empty() && s.running_stats.is_empty() {
                return;
            }
            let Some(st) = stored.remove(path) else {
                problems.push(format!("missing state {path}"));
                return;
            };
            for (slot, source) in [
                (&mut s.params, st.params),
                (&mut s.running_stats, st.running_stats),
            ] {
                if slot.len() != source.len() || slot.keys().any(|k| !source.contains_key(k)) {
                    problems.push(format!("state {path} has mismatched tensor names"));
                    continue;
                }
                for (name, t) in source {
                    let dst = slot.get_mut(&name).expect("checked above");
                    if t.shape() != dst.shape() || t.len() != dst.len() {
                        problems.push(format!(
                            "{path}.{name} has shape {:?}, expected {:?}",
                            t.shape(),
                            dst.shape()
                        ));
                    } else {
                        *dst = t;
                    }
                }
            }
        });
        problems.extend(stored.keys().map(|k| format!("unexpected state {k}")));
        if !problems.is_empty() {
            return Err(Error::Checkpoint(problems.join("; ")));
        }
        Ok(model)
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Model::from_checkpoint_json(&text).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Weighted total loss of the whole model as a gradient-check objective.
/// The segment selection of the first gradient evaluation is reused by
/// every later evaluation.
pub struct ModelObjective {
    pub model: Model,
    labels: Vec<usize>,
    mode: BranchMode,
    selection: Option<Vec<Vec<usize>>>,
}

impl ModelObjective {
    pub fn new(model: Model, labels: Vec<usize>, mode: BranchMode) -> Self {
        ModelObjective {
            model,
            labels,
            mode,
            selection: None,
        }
    }

    pub fn selection(&self) -> Option<&[Vec<usize>]> {
        self.selection.as_deref()
    }
}

impl Objective for ModelObjective {
    fn value(&mut self, input: &Tensor) -> Result<f64> {
        let out = self.model.forward(input, self.selection.as_deref())?;
        let (l, _) = self.model.losses(&out, &self.labels, self.mode)?;
        Ok(l.weighted(&self.model.config.loss_weights.for_mode(self.mode)))
    }

    fn value_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)> {
        self.model.zero_grads();
        let out = self.model.forward(input, self.selection.as_deref())?;
        if self.selection.is_none() {
            self.selection = Some(out.selected.clone());
        }
        let (l, grads) = self.model.losses(&out, &self.labels, self.mode)?;
        let dx = self.model.backward(&grads)?;
        Ok((
            l.weighted(&self.model.config.loss_weights.for_mode(self.mode)),
            dx,
        ))
    }

    fn visit_states(&mut self, f: &mut dyn FnMut(&str, &mut LayerState)) {
        self.model.visit_states(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;

    pub(crate) fn tiny_config(classes: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(classes);
        cfg.backbone = BackboneConfig::from_channels(3, &[(4, 1), (4, 2)]);
        for b in &mut cfg.backbone.blocks {
            b.temporal_kernel = 3;
        }
        cfg.frames = 12;
        cfg.segments = 3;
        cfg.selected = 2;
        cfg
    }

    fn input(b: usize, cfg: &ModelConfig) -> Tensor {
        let n = b * 3 * cfg.frames * 25;
        Tensor::new(
            vec![b, 3, cfg.frames, 25],
            (0..n)
                .map(|i| (i as f64 * 0.173).sin() + 0.05 * (i % 7) as f64)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn full_model_gradient_check_with_frozen_selection() {
        let cfg = tiny_config(4);
        let x = input(2, &cfg);
        let mut obj =
            ModelObjective::new(Model::new(cfg, 11).unwrap(), vec![1, 3], BranchMode::Both);
        let report = grad_check(&mut obj, &x, 1e-6).unwrap();
        assert!(report.passed(1e-4), "{report:?}");
        assert!(obj.selection().is_some());
    }

    #[test]
    fn checkpoint_round_trip_is_byte_stable() {
        let mut m = Model::new(tiny_config(3), 5).unwrap();
        let x = input(2, m.config());
        m.compute_gradients(&x, &[0, 2], BranchMode::Both).unwrap();
        let a = m.to_checkpoint_json().unwrap();
        let mut back = Model::from_checkpoint_json(&a).unwrap();
        assert_eq!(back.to_checkpoint_json().unwrap(), a);
        m.set_mode(Mode::Eval);
        back.set_mode(Mode::Eval);
        assert_eq!(
            m.predict(&x, BranchMode::Both).unwrap(),
            back.predict(&x, BranchMode::Both).unwrap()
        );
    }

    #[test]
    fn checkpoint_with_wrong_shapes_is_rejected() {
        let mut m = Model::new(tiny_config(3), 5).unwrap();
        let text = m.to_checkpoint_json().unwrap();
        let mut other = tiny_config(3);
        other.backbone = BackboneConfig::from_channels(3, &[(5, 1), (4, 2)]);
        for b in &mut other.backbone.blocks {
            b.temporal_kernel = 3;
        }
        let swapped = text.replace(
            &serde_json::to_string(&m.config().backbone).unwrap(),
            &serde_json::to_string(&other.backbone).unwrap(),
        );
        assert_ne!(swapped, text);
        assert!(matches!(
            Model::from_checkpoint_json(&swapped),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn too_short_input_is_rejected_by_config() {
        let mut cfg = tiny_config(3);
        cfg.frames = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn global_mode_leaves_dfl_gradients_zero() {
        let mut m = Model::new(tiny_config(3), 2).unwrap();
        m.compute_gradients(&input(2, m.config()), &[0, 1], BranchMode::Global)
            .unwrap();
        m.visit_states(&mut |path, s| {
            let zero = s.grads.values().all(|g| g.max_abs() == 0.0);
            if path.contains("heads.shared") || path.contains("heads.slot") {
                assert!(zero, "{path}");
            }
        });
    }
}
