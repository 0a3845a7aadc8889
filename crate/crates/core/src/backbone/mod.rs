//! Stacked spatial-temporal graph convolution blocks with optional spatial
//! attention after each block.

mod block;
mod esa;
mod graph_conv;
mod temporal_conv;

use std::ops::RangeInclusive;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use block::{StgcnBlock, StgcnBlockConfig, DEFAULT_TEMPORAL_KERNEL};
pub use esa::{EsaBlock, DEFAULT_ESA_KERNEL};
pub use graph_conv::{GraphConv, PARTITION_PARAMS};
pub use temporal_conv::{output_frames, TemporalConv};

use crate::error::{Error, Result};
use crate::graph::SkeletonGraph;
use crate::nn::{join_path, Layer, LayerState, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub blocks: Vec<StgcnBlockConfig>,
    #[serde(default)]
    pub esa_enabled: bool,
    #[serde(default = "default_esa_kernel")]
    pub esa_kernel: usize,
}

fn default_esa_kernel() -> usize {
    DEFAULT_ESA_KERNEL
}

impl Default for BackboneConfig {
    /// Four blocks: 3→16, 16→16, 16→32 (stride 2), 32→64 (stride 2).
    fn default() -> Self {
        BackboneConfig::from_channels(3, &[(16, 1), (16, 1), (32, 2), (64, 2)])
    }
}

impl BackboneConfig {
    /// Chains `(out_channels, stride)` pairs starting from `in_channels`.
    pub fn from_channels(in_channels: usize, layers: &[(usize, usize)]) -> Self {
        let mut prev = in_channels;
        let blocks = layers
            .iter()
            .map(|&(out, stride)| {
                let b = StgcnBlockConfig::new(prev, out, stride);
                prev = out;
                b
            })
            .collect();
        BackboneConfig {
            blocks,
            esa_enabled: false,
            esa_kernel: DEFAULT_ESA_KERNEL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::invalid("backbone needs at least one block"));
        }
        for b in &self.blocks {
            b.validate()?;
        }
        for (i, pair) in self.blocks.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::invalid(format!(
                    "block {} outputs {} channels but block {} expects {}",
                    i,
                    pair[0].out_channels,
                    i + 1,
                    pair[1].in_channels
                )));
            }
        }
        if self.esa_enabled && self.esa_kernel % 2 == 0 {
            return Err(Error::invalid(format!(
                "attention kernel must be odd, got {}",
                self.esa_kernel
            )));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.blocks[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.out_channels)
    }

    pub fn stride_product(&self) -> usize {
        self.blocks.iter().map(|b| b.temporal_stride).product()
    }

    pub fn output_frames(&self, frames: usize) -> usize {
        self.blocks.iter().fold(frames, |t, b| b.output_frames(t))
    }

    /// Input frames that reach output frame `t_out` through the temporal
    /// convolutions, clamped to `[0, frames − 1]`.
    ///
    /// The attention block mixes all frames through its time average; that
    /// path is not part of this range.
    pub fn receptive_field(&self, t_out: usize, frames: usize) -> RangeInclusive<usize> {
        let (mut lo, mut hi) = (t_out as i64, t_out as i64);
        for b in self.blocks.iter().rev() {
            let pad = (b.temporal_kernel as i64 - 1) / 2;
            let s = b.temporal_stride as i64;
            lo = lo * s - pad;
            hi = hi * s - pad + b.temporal_kernel as i64 - 1;
        }
        let last = frames as i64 - 1;
        (lo.clamp(0, last) as usize)..=(hi.clamp(0, last) as usize)
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    blocks: Vec<StgcnBlock>,
    attention: Vec<EsaBlock>,
    activations: Vec<Tensor>,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(
        graph: Arc<SkeletonGraph>,
        config: BackboneConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.blocks.len());
        let mut attention = Vec::new();
        for (i, b) in config.blocks.iter().enumerate() {
            blocks.push(StgcnBlock::new(
                &format!("block{i}"),
                graph.clone(),
                *b,
                rng,
            )?);
            if config.esa_enabled {
                attention.push(EsaBlock::new(
                    &format!("esa{i}"),
                    b.out_channels,
                    config.esa_kernel,
                    rng,
                )?);
            }
        }
        Ok(Backbone {
            config,
            blocks,
            attention,
            activations: Vec::new(),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Per-block outputs of the last forward, after attention when enabled.
    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }
}

impl Layer for Backbone {
    fn name(&self) -> &str {
        "backbone"
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        if input.ndim() == 4 && input.dim(2) < self.config.stride_product() {
            return Err(Error::invalid(format!(
                "clip has {} frames but the backbone downsamples by {}",
                input.dim(2),
                self.config.stride_product()
            )));
        }
        self.activations.clear();
        let mut h = input.clone();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            h = block.forward(&h)?;
            if let Some(esa) = self.attention.get_mut(i) {
                h = esa.forward(&h)?;
            }
            self.activations.push(h.clone());
        }
        Ok(h)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let mut g = grad_output.clone();
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            if let Some(esa) = self.attention.get_mut(i) {
                g = esa.backward(&g)?;
            }
            g = block.backward(&g)?;
        }
        Ok(g)
    }

    fn visit_states(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut LayerState)) {
        let p = join_path(prefix, "backbone");
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_states(&p, f);
            if let Some(esa) = self.attention.get_mut(i) {
                esa.visit_states(&p, f);
            }
        }
    }
}
