use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{SkeletonGraph, PARTITIONS};
use crate::nn::layer::missing_forward;
use crate::nn::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::nn::tensor::debug_check_finite;
use crate::nn::{join_path, xavier_uniform, Layer, LayerState, Tensor};

pub const PARTITION_PARAMS: [&str; PARTITIONS] =
    ["weight_root", "weight_centripetal", "weight_centrifugal"];

/// Spatial graph convolution applied independently to every frame of a
/// `[B × C × T × V]` batch: `f_out = Σ_k W_kᵀ · f_in · Ā_kᵀ`.
#[derive(Debug, Clone)]
pub struct GraphConv {
    name: String,
    graph: Arc<SkeletonGraph>,
    in_channels: usize,
    out_channels: usize,
    state: LayerState,
    input: Option<Tensor>,
}

impl GraphConv {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        graph: Arc<SkeletonGraph>,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let mut state = LayerState::new();
        for p in PARTITION_PARAMS {
            state.add_param(
                p,
                xavier_uniform(rng, &[in_channels, out_channels], in_channels, out_channels),
            );
        }
        GraphConv {
            name: name.to_string(),
            graph,
            in_channels,
            out_channels,
            state,
            input: None,
        }
    }

    pub fn state(&self) -> &LayerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut LayerState {
        &mut self.state
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        let v = self.graph.joints();
        if x.ndim() != 4 || x.dim(1) != self.in_channels || x.dim(3) != v {
            return Err(Error::shape(
                "graph conv",
                x.shape(),
                &[0, self.in_channels, 0, v],
            ));
        }
        Ok((x.dim(0), x.dim(2)))
    }
}

impl Layer for GraphConv {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (b, t) = self.check_input(input)?;
        let (c, co, v) = (self.in_channels, self.out_channels, self.graph.joints());
        let tv = t * v;
        let mut out = vec![0.0; b * co * tv];
        let mut agg = vec![0.0; c * tv];
        for (xb, ob) in input
            .data()
            .chunks_exact(c * tv)
            .zip(out.chunks_exact_mut(co * tv))
        {
            for (k, p) in PARTITION_PARAMS.iter().enumerate() {
                agg.fill(0.0);
                self.graph.aggregate(k, xb, &mut agg);
                gemm_tn(self.state.param(p).data(), &agg, ob, co, c, tv);
            }
        }
        self.input = Some(input.clone());
        let out = Tensor::new(vec![b, co, t, v], out)?;
        debug_check_finite(&out, &self.name);
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| missing_forward(&self.name))?;
        let (b, t) = (input.dim(0), input.dim(2));
        let (c, co, v) = (self.in_channels, self.out_channels, self.graph.joints());
        if grad_output.shape() != [b, co, t, v] {
            return Err(Error::shape(
                "graph conv backward",
                grad_output.shape(),
                &[b, co, t, v],
            ));
        }
        let tv = t * v;
        let mut grad_in = vec![0.0; input.len()];
        let mut agg = vec![0.0; c * tv];
        for k in 0..PARTITIONS {
            let p = PARTITION_PARAMS[k];
            let w = self.state.param(p).clone();
            let mut dw = vec![0.0; c * co];
            for ((xb, gb), dxb) in input
                .data()
                .chunks_exact(c * tv)
                .zip(grad_output.data().chunks_exact(co * tv))
                .zip(grad_in.chunks_exact_mut(c * tv))
            {
                agg.fill(0.0);
                self.graph.aggregate(k, xb, &mut agg);
                gemm_nt(&agg, gb, &mut dw, c, tv, co);
                agg.fill(0.0);
                gemm_nn(w.data(), gb, &mut agg, c, co, tv);
                self.graph.aggregate_transpose(k, &agg, dxb);
            }
            for (g, d) in self.state.grad_mut(p).data_mut().iter_mut().zip(dw) {
                *g += d;
            }
        }
        Tensor::new(input.shape().to_vec(), grad_in)
    }

    fn visit_states(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut LayerState)) {
        f(&join_path(prefix, &self.name), &mut self.state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::graph_conv_apply;
    use crate::nn::{grad_check, LayerObjective};
    use crate::rng;

    fn chain_graph() -> Arc<SkeletonGraph> {
        Arc::new(SkeletonGraph::from_parents(&[-1, 0, 1, 1, 3], 1).unwrap())
    }

    #[test]
    fn matches_single_frame_reference() {
        let g = chain_graph();
        let mut r = rng::rng(3);
        let mut layer = GraphConv::new("gc", g.clone(), 2, 3, &mut r);
        let x = Tensor::new(
            vec![1, 2, 2, 5],
            (0..20).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let y = layer.forward(&x).unwrap();
        let weights = PARTITION_PARAMS.map(|p| layer.state().param(p).clone());
        for t in 0..2 {
            let mut frame = Tensor::zeros(&[2, 5]);
            for c in 0..2 {
                for v in 0..5 {
                    frame.set(&[c, v], x.get(&[0, c, t, v]));
                }
            }
            let expect = graph_conv_apply(&g, &frame, &weights).unwrap();
            for c in 0..3 {
                for v in 0..5 {
                    assert!((y.get(&[0, c, t, v]) - expect.get(&[c, v])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradient_check() {
        let layer = GraphConv::new("gc", chain_graph(), 3, 2, &mut rng::rng(1));
        let mut obj = LayerObjective::new(layer, 9);
        let x = Tensor::new(
            vec![2, 3, 4, 5],
            (0..120).map(|i| (i as f64 * 0.71).cos()).collect(),
        )
        .unwrap();
        let report = grad_check(&mut obj, &x, 1e-6).unwrap();
        assert!(report.passed(1e-6), "{report:?}");
    }

    #[test]
    fn rejects_wrong_joint_count() {
        let mut layer = GraphConv::new("gc", chain_graph(), 3, 2, &mut rng::rng(1));
        assert!(layer.forward(&Tensor::zeros(&[1, 3, 4, 6])).is_err());
    }
}
