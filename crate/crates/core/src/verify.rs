//! Finite-difference verification of every layer type and the full model
//! at tiny shapes.

use std::sync::Arc;

use rand::RngExt;

use crate::backbone::{
    Backbone, BackboneConfig, EsaBlock, GraphConv, StgcnBlock, StgcnBlockConfig, TemporalConv,
};
use crate::error::Result;
use crate::graph::build_graph;
use crate::heads::BranchMode;
use crate::model::{Model, ModelConfig, ModelObjective};
use crate::nn::gradcheck::Corrupted;
use crate::nn::{
    grad_check, BatchNorm, Dense, GradCheckReport, LayerObjective, Objective, Relu, Tensor,
};
use crate::rng;

/// Largest relative error any check may report.
pub const SUITE_TOLERANCE: f64 = 1e-4;

pub const SUITE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub check: String,
    pub report: GradCheckReport,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.report.passed(SUITE_TOLERANCE)
    }
}

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x: f64 = r.random_range(0.05..1.0);
            if r.random_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// The tiny model used for the full-model checks: the topology, class
/// count, segment counts and saliency mode of `base` with two narrow blocks.
pub fn tiny_model_config(base: &ModelConfig) -> ModelConfig {
    let mut cfg = base.clone();
    let mut backbone = BackboneConfig::from_channels(3, &[(4, 1), (4, 2)]);
    backbone.esa_enabled = base.backbone.esa_enabled;
    backbone.esa_kernel = 3;
    for b in &mut backbone.blocks {
        b.temporal_kernel = 3;
    }
    cfg.backbone = backbone;
    cfg.frames = 2 * cfg.segments + 2;
    cfg
}

fn check(name: &str, obj: &mut dyn Objective, input: &Tensor) -> Result<SuiteResult> {
    let report = grad_check(obj, input, SUITE_EPSILON)?;
    log::debug!("{name}: max relative error {:.3e}", report.max_rel_error());
    Ok(SuiteResult {
        check: name.to_string(),
        report,
    })
}

/// Checks dense, batch norm, ReLU, graph conv, temporal conv, both block
/// residual kinds, ESA, the backbone, and the full model in each branch
/// mode. With `corrupt`, the full-model gradients are deliberately scaled.
pub fn gradient_suite(base: &ModelConfig, corrupt: bool) -> Result<Vec<SuiteResult>> {
    let graph = Arc::new(build_graph(&base.topology)?);
    let v = graph.joints();
    let r = &mut rng::rng(0x6772_6164);
    let map = |c: usize, seed: u64| random_input(&[2, c, 6, v], seed);
    let mut out = Vec::new();

    out.push(check(
        "dense",
        &mut LayerObjective::new(Dense::new("dense", 5, 4, r), 1),
        &random_input(&[3, 5], 2),
    )?);
    out.push(check(
        "batch_norm",
        &mut LayerObjective::new(BatchNorm::new("bn", 3), 3),
        &map(3, 4),
    )?);
    out.push(check(
        "relu",
        &mut LayerObjective::new(Relu::new("relu"), 5),
        &map(3, 6),
    )?);
    out.push(check(
        "graph_conv",
        &mut LayerObjective::new(GraphConv::new("gcn", graph.clone(), 3, 4, r), 7),
        &map(3, 8),
    )?);
    out.push(check(
        "temporal_conv",
        &mut LayerObjective::new(TemporalConv::new("tcn", 3, 4, 3, 2, r)?, 9),
        &map(3, 10),
    )?);
    let mut identity = StgcnBlockConfig::new(4, 4, 1);
    identity.temporal_kernel = 3;
    out.push(check(
        "block_identity",
        &mut LayerObjective::new(StgcnBlock::new("block", graph.clone(), identity, r)?, 11),
        &map(4, 12),
    )?);
    let mut projection = StgcnBlockConfig::new(3, 4, 2);
    projection.temporal_kernel = 3;
    out.push(check(
        "block_projection",
        &mut LayerObjective::new(StgcnBlock::new("block", graph.clone(), projection, r)?, 13),
        &map(3, 14),
    )?);
    out.push(check(
        "esa",
        &mut LayerObjective::new(EsaBlock::new("esa", 3, 3, r)?, 15),
        &map(3, 16),
    )?);
    let tiny = tiny_model_config(base);
    let mut backbone_cfg = tiny.backbone.clone();
    backbone_cfg.esa_enabled = true;
    out.push(check(
        "backbone",
        &mut LayerObjective::new(Backbone::new(graph.clone(), backbone_cfg, r)?, 17),
        &map(3, 18),
    )?);

    let x = random_input(&[2, 3, tiny.frames, v], 19);
    let labels = vec![0, (tiny.classes - 1).min(1)];
    for mode in [BranchMode::Global, BranchMode::Both] {
        let model = Model::new(tiny.clone(), 20)?;
        let obj = ModelObjective::new(model, labels.clone(), mode);
        let name = format!("model_{mode}");
        if corrupt {
            out.push(check(
                &name,
                &mut Corrupted {
                    inner: obj,
                    factor: 1.5,
                },
                &x,
            )?);
        } else {
            let mut obj = obj;
            out.push(check(&name, &mut obj, &x)?);
        }
    }
    Ok(out)
}
