use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layer::missing_forward;
use crate::nn::{join_path, sigmoid, xavier_uniform, Layer, LayerState, Tensor};

pub const DEFAULT_ESA_KERNEL: usize = 9;

/// Spatial attention: `M = sigmoid(conv_joint(mean_T f))`, `out = f + M ⊙ f`.
///
/// The convolution maps the C channels to a single mask value per joint and
/// slides along the joint axis with zero padding; the mask is shared by all
/// channels and frames.
#[derive(Debug, Clone)]
pub struct EsaBlock {
    name: String,
    channels: usize,
    kernel: usize,
    state: LayerState,
    cache: Option<EsaCache>,
}

#[derive(Debug, Clone)]
struct EsaCache {
    input: Tensor,
    pooled: Vec<f64>,
    mask: Vec<f64>,
}

impl EsaBlock {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::invalid(format!(
                "attention kernel must be odd, got {kernel}"
            )));
        }
        let mut state = LayerState::new();
        state.add_param(
            "weight",
            xavier_uniform(rng, &[channels, kernel], channels * kernel, kernel),
        );
        state.add_param("bias", Tensor::zeros(&[1]));
        Ok(EsaBlock {
            name: name.to_string(),
            channels,
            kernel,
            state,
            cache: None,
        })
    }

    pub fn state(&self) -> &LayerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut LayerState {
        &mut self.state
    }

    /// Pairs `(c, k, src)` such that mask logit at joint `v` reads `pooled[c, src]` with `weight[c, k]`.
    fn taps(&self, v: usize, joints: usize) -> impl Iterator<Item = (usize, usize)> {
        let pad = (self.kernel - 1) / 2;
        (0..self.kernel).filter_map(move |k| {
            let src = (v + k).checked_sub(pad)?;
            (src < joints).then_some((k, src))
        })
    }

    /// Attention mask `[B × V]` from the last forward.
    pub fn last_mask(&self) -> Option<&[f64]> {
        self.cache.as_ref().map(|c| c.mask.as_slice())
    }
}

impl Layer for EsaBlock {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        if input.ndim() != 4 || input.dim(1) != self.channels {
            return Err(Error::shape(
                "attention",
                input.shape(),
                &[0, self.channels, 0, 0],
            ));
        }
        let (b, c, t, v) = (input.dim(0), self.channels, input.dim(2), input.dim(3));
        let x = input.data();
        let mut pooled = vec![0.0; b * c * v];
        for bc in 0..b * c {
            let p = &mut pooled[bc * v..][..v];
            for frame in x[bc * t * v..][..t * v].chunks_exact(v) {
                for (pi, xi) in p.iter_mut().zip(frame) {
                    *pi += xi;
                }
            }
            p.iter_mut().for_each(|pi| *pi /= t as f64);
        }
        let w = self.state.param("weight").data();
        let bias = self.state.param("bias").data()[0];
        let mut mask = vec![0.0; b * v];
        for bi in 0..b {
            for vi in 0..v {
                let mut z = bias;
                for ci in 0..c {
                    for (k, src) in self.taps(vi, v) {
                        z += w[ci * self.kernel + k] * pooled[(bi * c + ci) * v + src];
                    }
                }
                mask[bi * v + vi] = sigmoid(z);
            }
        }
        let mut out = x.to_vec();
        for (bc, chunk) in out.chunks_exact_mut(t * v).enumerate() {
            let m = &mask[(bc / c) * v..][..v];
            for frame in chunk.chunks_exact_mut(v) {
                for (o, mi) in frame.iter_mut().zip(m) {
                    *o *= 1.0 + mi;
                }
            }
        }
        self.cache = Some(EsaCache {
            input: input.clone(),
            pooled,
            mask,
        });
        Tensor::new(input.shape().to_vec(), out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| missing_forward(&self.name))?;
        let input = &cache.input;
        if grad_output.shape() != input.shape() {
            return Err(Error::shape(
                "attention backward",
                grad_output.shape(),
                input.shape(),
            ));
        }
        let (b, c, t, v) = (input.dim(0), self.channels, input.dim(2), input.dim(3));
        let (x, g) = (input.data(), grad_output.data());
        let mut dz = vec![0.0; b * v];
        for bc in 0..b * c {
            let bi = bc / c;
            for (xf, gf) in x[bc * t * v..][..t * v]
                .chunks_exact(v)
                .zip(g[bc * t * v..][..t * v].chunks_exact(v))
            {
                for vi in 0..v {
                    dz[bi * v + vi] += xf[vi] * gf[vi];
                }
            }
        }
        for (d, m) in dz.iter_mut().zip(&cache.mask) {
            *d *= m * (1.0 - m);
        }
        let w = self.state.param("weight").data().to_vec();
        let mut dw = vec![0.0; c * self.kernel];
        let mut dpooled = vec![0.0; b * c * v];
        for bi in 0..b {
            for vi in 0..v {
                let d = dz[bi * v + vi];
                for ci in 0..c {
                    for (k, src) in self.taps(vi, v) {
                        let pi = (bi * c + ci) * v + src;
                        dw[ci * self.kernel + k] += d * cache.pooled[pi];
                        dpooled[pi] += w[ci * self.kernel + k] * d;
                    }
                }
            }
        }
        let mut grad_in = vec![0.0; x.len()];
        for (bc, chunk) in grad_in.chunks_exact_mut(t * v).enumerate() {
            let m = &cache.mask[(bc / c) * v..][..v];
            let dp = &dpooled[bc * v..][..v];
            for (frame, gf) in chunk
                .chunks_exact_mut(v)
                .zip(g[bc * t * v..][..t * v].chunks_exact(v))
            {
                for vi in 0..v {
                    frame[vi] = gf[vi] * (1.0 + m[vi]) + dp[vi] / t as f64;
                }
            }
        }
        let db: f64 = dz.iter().sum();
        for (gw, d) in self.state.grad_mut("weight").data_mut().iter_mut().zip(dw) {
            *gw += d;
        }
        self.state.grad_mut("bias").data_mut()[0] += db;
        Tensor::new(input.shape().to_vec(), grad_in)
    }

    fn visit_states(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut LayerState)) {
        f(&join_path(prefix, &self.name), &mut self.state);
    }
}
