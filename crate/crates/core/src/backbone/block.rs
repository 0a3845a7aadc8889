use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph_conv::GraphConv;
use super::temporal_conv::{output_frames, TemporalConv};
use crate::error::{Error, Result};
use crate::graph::SkeletonGraph;
use crate::nn::{join_path, BatchNorm, Layer, LayerState, Relu, Tensor};

pub const DEFAULT_TEMPORAL_KERNEL: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StgcnBlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "default_kernel")]
    pub temporal_kernel: usize,
    #[serde(default = "one")]
    pub temporal_stride: usize,
    #[serde(default = "yes")]
    pub residual: bool,
    #[serde(default = "yes")]
    pub batch_norm: bool,
}

fn default_kernel() -> usize {
    DEFAULT_TEMPORAL_KERNEL
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl StgcnBlockConfig {
    pub fn new(in_channels: usize, out_channels: usize, temporal_stride: usize) -> Self {
        StgcnBlockConfig {
            in_channels,
            out_channels,
            temporal_kernel: DEFAULT_TEMPORAL_KERNEL,
            temporal_stride,
            residual: true,
            batch_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temporal_kernel % 2 == 0 {
            return Err(Error::invalid(format!(
                "temporal kernel must be odd, got {}",
                self.temporal_kernel
            )));
        }
        if self.temporal_stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("block channels and stride must be positive"));
        }
        Ok(())
    }

    pub fn output_frames(&self, frames: usize) -> usize {
        output_frames(frames, self.temporal_stride)
    }
}

#[derive(Debug, Clone)]
enum Residual {
    None,
    Identity,
    Projection {
        conv: TemporalConv,
        bn: Option<BatchNorm>,
    },
}

/// Spatial graph conv, BN, ReLU, temporal conv, BN, residual add, ReLU.
#[derive(Debug, Clone)]
pub struct StgcnBlock {
    name: String,
    config: StgcnBlockConfig,
    gcn: GraphConv,
    bn1: Option<BatchNorm>,
    relu1: Relu,
    tcn: TemporalConv,
    bn2: Option<BatchNorm>,
    residual: Residual,
    relu_out: Relu,
}

fn forward_opt(layer: &mut Option<BatchNorm>, x: Tensor) -> Result<Tensor> {
    match layer {
        Some(l) => l.forward(&x),
        None => Ok(x),
    }
}

fn backward_opt(layer: &mut Option<BatchNorm>, g: Tensor) -> Result<Tensor> {
    match layer {
        Some(l) => l.backward(&g),
        None => Ok(g),
    }
}

impl StgcnBlock {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        graph: Arc<SkeletonGraph>,
        config: StgcnBlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (ci, co) = (config.in_channels, config.out_channels);
        let bn = |n: &str| config.batch_norm.then(|| BatchNorm::new(n, co));
        let gcn = GraphConv::new("gcn", graph, ci, co, rng);
        let tcn = TemporalConv::new(
            "tcn",
            co,
            co,
            config.temporal_kernel,
            config.temporal_stride,
            rng,
        )?;
        let residual = if !config.residual {
            Residual::None
        } else if ci == co && config.temporal_stride == 1 {
            Residual::Identity
        } else {
            Residual::Projection {
                conv: TemporalConv::new("residual", ci, co, 1, config.temporal_stride, rng)?,
                bn: bn("residual_bn"),
            }
        };
        Ok(StgcnBlock {
            name: name.to_string(),
            config,
            gcn,
            bn1: bn("bn1"),
            relu1: Relu::new("relu1"),
            tcn,
            bn2: bn("bn2"),
            residual,
            relu_out: Relu::new("relu_out"),
        })
    }

    pub fn config(&self) -> &StgcnBlockConfig {
        &self.config
    }
}

impl Layer for StgcnBlock {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let h = self.gcn.forward(input)?;
        let h = forward_opt(&mut self.bn1, h)?;
        let h = self.relu1.forward(&h)?;
        let h = self.tcn.forward(&h)?;
        let mut h = forward_opt(&mut self.bn2, h)?;
        match &mut self.residual {
            Residual::None => {}
            Residual::Identity => h.add_assign(input)?,
            Residual::Projection { conv, bn } => {
                let r = conv.forward(input)?;
                h.add_assign(&forward_opt(bn, r)?)?;
            }
        }
        self.relu_out.forward(&h)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let g = self.relu_out.backward(grad_output)?;
        let g_res = match &mut self.residual {
            Residual::None => None,
            Residual::Identity => Some(g.clone()),
            Residual::Projection { conv, bn } => {
                let gr = backward_opt(bn, g.clone())?;
                Some(conv.backward(&gr)?)
            }
        };
        let g = backward_opt(&mut self.bn2, g)?;
        let g = self.tcn.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        let g = backward_opt(&mut self.bn1, g)?;
        let mut g = self.gcn.backward(&g)?;
        if let Some(r) = g_res {
            g.add_assign(&r)?;
        }
        Ok(g)
    }

    fn visit_states(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut LayerState)) {
        let p = join_path(prefix, &self.name);
        self.gcn.visit_states(&p, f);
        if let Some(bn) = &mut self.bn1 {
            bn.visit_states(&p, f);
        }
        self.relu1.visit_states(&p, f);
        self.tcn.visit_states(&p, f);
        if let Some(bn) = &mut self.bn2 {
            bn.visit_states(&p, f);
        }
        if let Residual::Projection { conv, bn } = &mut self.residual {
            conv.visit_states(&p, f);
            if let Some(bn) = bn {
                bn.visit_states(&p, f);
            }
        }
        self.relu_out.visit_states(&p, f);
    }
}
