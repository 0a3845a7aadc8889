use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layer::missing_forward;
use crate::nn::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::nn::tensor::debug_check_finite;
use crate::nn::{join_path, xavier_uniform, Layer, LayerState, Tensor};

/// Per-joint 1D convolution along time on `[B × C × T × V]` with padding
/// `(K − 1) / 2` and the given stride, so `T' = ceil(T / stride)`.
#[derive(Debug, Clone)]
pub struct TemporalConv {
    name: String,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    state: LayerState,
    input: Option<Tensor>,
}

pub fn output_frames(frames: usize, stride: usize) -> usize {
    frames.div_ceil(stride)
}

impl TemporalConv {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel % 2 == 0 || stride == 0 {
            return Err(Error::invalid(format!(
                "temporal conv needs an odd kernel and positive stride, got kernel {kernel} stride {stride}"
            )));
        }
        let mut state = LayerState::new();
        state.add_param(
            "weight",
            xavier_uniform(
                rng,
                &[out_channels, in_channels, kernel],
                in_channels * kernel,
                out_channels * kernel,
            ),
        );
        state.add_param("bias", Tensor::zeros(&[out_channels]));
        Ok(TemporalConv {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel,
            stride,
            state,
            input: None,
        })
    }

    pub fn state(&self) -> &LayerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut LayerState {
        &mut self.state
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Input frame feeding output frame `to` through kernel tap `k`, if inside the clip.
    fn source(&self, to: usize, k: usize, frames: usize) -> Option<usize> {
        let pad = (self.kernel - 1) / 2;
        let t = (to * self.stride + k).checked_sub(pad)?;
        (t < frames).then_some(t)
    }

    /// `col[(c, k), (t', v)] = x[c, t'·s + k − pad, v]`, zero outside the clip.
    fn im2col(&self, xb: &[f64], t: usize, v: usize, col: &mut [f64]) {
        let to_n = output_frames(t, self.stride);
        col.fill(0.0);
        for c in 0..self.in_channels {
            for k in 0..self.kernel {
                let row = &mut col[(c * self.kernel + k) * to_n * v..][..to_n * v];
                for to in 0..to_n {
                    if let Some(ti) = self.source(to, k, t) {
                        row[to * v..][..v].copy_from_slice(&xb[(c * t + ti) * v..][..v]);
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], t: usize, v: usize, dxb: &mut [f64]) {
        let to_n = output_frames(t, self.stride);
        for c in 0..self.in_channels {
            for k in 0..self.kernel {
                let row = &col[(c * self.kernel + k) * to_n * v..][..to_n * v];
                for to in 0..to_n {
                    if let Some(ti) = self.source(to, k, t) {
                        let dst = &mut dxb[(c * t + ti) * v..][..v];
                        for (d, s) in dst.iter_mut().zip(&row[to * v..][..v]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

impl Layer for TemporalConv {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        if input.ndim() != 4 || input.dim(1) != self.in_channels {
            return Err(Error::shape(
                "temporal conv",
                input.shape(),
                &[0, self.in_channels, 0, 0],
            ));
        }
        let (b, t, v) = (input.dim(0), input.dim(2), input.dim(3));
        let (c, co, kk) = (self.in_channels, self.out_channels, self.kernel);
        let to_n = output_frames(t, self.stride);
        let n = to_n * v;
        let mut col = vec![0.0; c * kk * n];
        let mut out = vec![0.0; b * co * n];
        let w = self.state.param("weight").data();
        let bias = self.state.param("bias").data();
        for (xb, ob) in input
            .data()
            .chunks_exact(c * t * v)
            .zip(out.chunks_exact_mut(co * n))
        {
            self.im2col(xb, t, v, &mut col);
            for (row, &bv) in ob.chunks_exact_mut(n).zip(bias) {
                row.fill(bv);
            }
            gemm_nn(w, &col, ob, co, c * kk, n);
        }
        self.input = Some(input.clone());
        let out = Tensor::new(vec![b, co, to_n, v], out)?;
        debug_check_finite(&out, &self.name);
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self
            .input
            .take()
            .ok_or_else(|| missing_forward(&self.name))?;
        let (b, t, v) = (input.dim(0), input.dim(2), input.dim(3));
        let (c, co, kk) = (self.in_channels, self.out_channels, self.kernel);
        let to_n = output_frames(t, self.stride);
        let n = to_n * v;
        if grad_output.shape() != [b, co, to_n, v] {
            self.input = Some(input);
            return Err(Error::shape(
                "temporal conv backward",
                grad_output.shape(),
                &[b, co, to_n, v],
            ));
        }
        let mut col = vec![0.0; c * kk * n];
        let mut dcol = vec![0.0; c * kk * n];
        let mut dw = vec![0.0; co * c * kk];
        let mut db = vec![0.0; co];
        let mut grad_in = vec![0.0; input.len()];
        let w = self.state.param("weight").data().to_vec();
        for ((xb, gb), dxb) in input
            .data()
            .chunks_exact(c * t * v)
            .zip(grad_output.data().chunks_exact(co * n))
            .zip(grad_in.chunks_exact_mut(c * t * v))
        {
            self.im2col(xb, t, v, &mut col);
            gemm_nt(gb, &col, &mut dw, co, n, c * kk);
            for (d, row) in db.iter_mut().zip(gb.chunks_exact(n)) {
                *d += row.iter().sum::<f64>();
            }
            dcol.fill(0.0);
            gemm_tn(&w, gb, &mut dcol, c * kk, co, n);
            self.col2im(&dcol, t, v, dxb);
        }
        for (g, d) in self.state.grad_mut("weight").data_mut().iter_mut().zip(dw) {
            *g += d;
        }
        for (g, d) in self.state.grad_mut("bias").data_mut().iter_mut().zip(db) {
            *g += d;
        }
        let shape = input.shape().to_vec();
        self.input = Some(input);
        Tensor::new(shape, grad_in)
    }

    fn visit_states(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut LayerState)) {
        f(&join_path(prefix, &self.name), &mut self.state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, LayerObjective};
    use crate::rng;

    /// Direct-summation reference for one output element.
    fn naive(conv: &TemporalConv, x: &Tensor, b: usize, o: usize, to: usize, v: usize) -> f64 {
        let w = conv.state().param("weight");
        let pad = (conv.kernel - 1) as i64 / 2;
        let mut s = conv.state().param("bias").data()[o];
        for c in 0..conv.in_channels {
            for k in 0..conv.kernel {
                let ti = (to * conv.stride) as i64 + k as i64 - pad;
                if ti >= 0 && (ti as usize) < x.dim(2) {
                    s += w.get(&[o, c, k]) * x.get(&[b, c, ti as usize, v]);
                }
            }
        }
        s
    }

    #[test]
    fn matches_direct_summation_with_stride() {
        let mut conv = TemporalConv::new("tc", 2, 3, 5, 2, &mut rng::rng(4)).unwrap();
        conv.state_mut()
            .param_mut("bias")
            .data_mut()
            .copy_from_slice(&[0.1, -0.2, 0.3]);
        let x = Tensor::new(
            vec![2, 2, 7, 3],
            (0..84).map(|i| (i as f64 * 0.13).sin()).collect(),
        )
        .unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 4, 3]);
        for b in 0..2 {
            for o in 0..3 {
                for to in 0..4 {
                    for v in 0..3 {
                        assert!(
                            (y.get(&[b, o, to, v]) - naive(&conv, &x, b, o, to, v)).abs() < 1e-12
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn stride_two_halves_frames() {
        assert_eq!(output_frames(100, 2), 50);
        assert_eq!(output_frames(25, 2), 13);
        let mut conv = TemporalConv::new("tc", 1, 1, 9, 2, &mut rng::rng(0)).unwrap();
        assert_eq!(
            conv.forward(&Tensor::zeros(&[1, 1, 100, 2]))
                .unwrap()
                .shape(),
            &[1, 1, 50, 2]
        );
    }

    #[test]
    fn rejects_even_kernel() {
        assert!(TemporalConv::new("tc", 1, 1, 4, 1, &mut rng::rng(0)).is_err());
    }

    #[test]
    fn gradient_check() {
        let conv = TemporalConv::new("tc", 2, 3, 3, 2, &mut rng::rng(2)).unwrap();
        let mut obj = LayerObjective::new(conv, 5);
        let x = Tensor::new(
            vec![2, 2, 5, 3],
            (0..60).map(|i| (i as f64 * 0.29).cos()).collect(),
        )
        .unwrap();
        let report = grad_check(&mut obj, &x, 1e-6).unwrap();
        assert!(report.passed(1e-6), "{report:?}");
    }
}
