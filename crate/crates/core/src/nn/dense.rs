use rand::Rng;

use super::layer::{join_path, missing_forward, xavier_uniform, Layer, LayerState};
use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::{debug_check_finite, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `y = x·W + b` on `[rows × in]` inputs.
#[derive(Debug, Clone)]
pub struct Dense {
    name: String,
    in_features: usize,
    out_features: usize,
    state: LayerState,
    input: Option<Tensor>,
}

impl Dense {
    pub fn state(&self) -> &LayerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut LayerState {
        &mut self.state
    }

    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let mut state = LayerState::new();
        state.add_param(
            "weight",
            xavier_uniform(rng, &[in_features, out_features], in_features, out_features),
        );
        state.add_param("bias", Tensor::zeros(&[out_features]));
        Dense {
            name: name.to_string(),
            in_features,
            out_features,
            state,
            input: None,
        }
    }

    pub fn zeroed(name: &str, in_features: usize, out_features: usize) -> Self {
        let mut state = LayerState::new();
        state.add_param("weight", Tensor::zeros(&[in_features, out_features]));
        state.add_param("bias", Tensor::zeros(&[out_features]));
        Dense {
            name: name.to_string(),
            in_features,
            out_features,
            state,
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }
}

impl Layer for Dense {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        if input.ndim() != 2 || input.dim(1) != self.in_features {
            return Err(Error::shape(
                "dense forward",
                input.shape(),
                &[
                    input.shape().first().copied().unwrap_or(0),
                    self.in_features,
                ],
            ));
        }
        let rows = input.dim(0);
        let bias = self.state.param("bias").data();
        let mut out = Vec::with_capacity(rows * self.out_features);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        gemm_nn(
            input.data(),
            self.state.param("weight").data(),
            &mut out,
            rows,
            self.in_features,
            self.out_features,
        );
        self.input = Some(input.clone());
        let out = Tensor::from_parts(vec![rows, self.out_features], out);
        debug_check_finite(&out, &self.name);
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| missing_forward(&self.name))?;
        let rows = input.dim(0);
        if grad_output.shape() != [rows, self.out_features] {
            return Err(Error::shape(
                "dense backward",
                grad_output.shape(),
                &[rows, self.out_features],
            ));
        }
        let (nin, nout) = (self.in_features, self.out_features);
        gemm_tn(
            input.data(),
            grad_output.data(),
            self.state.grads.get_mut("weight").unwrap().data_mut(),
            nin,
            rows,
            nout,
        );
        let gb = self.state.grads.get_mut("bias").unwrap().data_mut();
        for r in 0..rows {
            for (b, &g) in gb
                .iter_mut()
                .zip(&grad_output.data()[r * nout..(r + 1) * nout])
            {
                *b += g;
            }
        }
        let mut gin = vec![0.0; rows * nin];
        gemm_nt(
            grad_output.data(),
            self.state.param("weight").data(),
            &mut gin,
            rows,
            nout,
            nin,
        );
        Ok(Tensor::from_parts(vec![rows, nin], gin))
    }

    fn visit_states(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut LayerState)) {
        f(&join_path(prefix, &self.name), &mut self.state);
    }
}
