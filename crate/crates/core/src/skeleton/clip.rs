use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::topology::SkeletonTopology;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// One motion sample: `positions` is `[T × V × 3]`, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonClip {
    pub topology: Arc<SkeletonTopology>,
    positions: Tensor,
    pub label: Option<usize>,
    pub subject_id: Option<u32>,
    pub camera_id: Option<u32>,
}

impl SkeletonClip {
    pub fn new(
        topology: Arc<SkeletonTopology>,
        positions: Tensor,
        label: Option<usize>,
    ) -> Result<Self> {
        let v = topology.joint_count();
        let s = positions.shape();
        if s.len() != 3 || s[1] != v || s[2] != 3 {
            return Err(Error::shape("clip positions", s, &[0, v, 3]));
        }
        if s[0] < 2 {
            return Err(Error::invalid(format!(
                "clip needs at least 2 frames, got {}",
                s[0]
            )));
        }
        if !positions.is_finite() {
            return Err(Error::NonFinite("clip positions".into()));
        }
        Ok(SkeletonClip {
            topology,
            positions,
            label,
            subject_id: None,
            camera_id: None,
        })
    }

    pub fn frames(&self) -> usize {
        self.positions.dim(0)
    }

    pub fn joints(&self) -> usize {
        self.positions.dim(1)
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    /// Same metadata, new positions (shape and finiteness re-validated).
    pub fn with_positions(&self, positions: Tensor) -> Result<Self> {
        let mut c = SkeletonClip::new(self.topology.clone(), positions, self.label)?;
        c.subject_id = self.subject_id;
        c.camera_id = self.camera_id;
        Ok(c)
    }

    pub fn joint(&self, t: usize, j: usize) -> [f64; 3] {
        let o = (t * self.joints() + j) * 3;
        let d = self.positions.data();
        [d[o], d[o + 1], d[o + 2]]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.joints() * 3;
        &self.positions.data()[t * n..(t + 1) * n]
    }

    /// Network input layout `[3 × T × V]`.
    pub fn to_channels_first(&self) -> Tensor {
        let (t_len, v) = (self.frames(), self.joints());
        let src = self.positions.data();
        let mut out = vec![0.0; 3 * t_len * v];
        for t in 0..t_len {
            for j in 0..v {
                for c in 0..3 {
                    out[(c * t_len + t) * v + j] = src[(t * v + j) * 3 + c];
                }
            }
        }
        Tensor::from_parts(vec![3, t_len, v], out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub clips: Vec<SkeletonClip>,
    pub class_count: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(clips: Vec<SkeletonClip>, class_count: usize, split: Split) -> Result<Self> {
        for (i, c) in clips.iter().enumerate() {
            match c.label {
                Some(l) if l >= class_count => {
                    return Err(Error::LabelOutOfRange {
                        label: l,
                        classes: class_count,
                    })
                }
                None => return Err(Error::invalid(format!("clip {i} has no label"))),
                _ => {}
            }
        }
        Ok(Dataset {
            clips,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clips.iter().map(|c| c.label.unwrap_or(0)).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for c in &self.clips {
            counts[c.label.unwrap_or(0)] += 1;
        }
        counts
    }

    /// Deterministic class-stratified hold-out: the last
    /// `round(val_fraction · n_c)` clips of every class go to validation.
    pub fn split_holdout(&self, val_fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::invalid(format!(
                "val fraction {val_fraction} not in [0, 1)"
            )));
        }
        let counts = self.class_counts();
        let mut seen = vec![0; self.class_count];
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for clip in &self.clips {
            let l = clip.label.unwrap_or(0);
            let n_val = (val_fraction * counts[l] as f64).round() as usize;
            if seen[l] >= counts[l] - n_val {
                val.push(clip.clone());
            } else {
                train.push(clip.clone());
            }
            seen[l] += 1;
        }
        Ok((
            Dataset::new(train, self.class_count, Split::Train)?,
            Dataset::new(val, self.class_count, Split::Val)?,
        ))
    }

    pub fn map_clips(
        &self,
        f: impl Fn(usize, &SkeletonClip) -> Result<SkeletonClip>,
    ) -> Result<Dataset> {
        let clips = self
            .clips
            .iter()
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(clips, self.class_count, self.split)
    }
}
