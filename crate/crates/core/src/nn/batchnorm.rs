use super::layer::{join_path, missing_forward, Layer, LayerState};
use super::tensor::{debug_check_finite, Tensor};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalisation over axis 1 of a `[B × C × ...]` tensor.
///
/// Train mode normalises with the batch statistics (taken over the batch and
/// every trailing axis) and folds them into the running estimates:
/// `running = 0.9·running + 0.1·batch`. Eval mode uses the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    name: String,
    channels: usize,
    state: LayerState,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    shape: Vec<usize>,
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl BatchNorm {
    pub fn state(&self) -> &LayerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut LayerState {
        &mut self.state
    }

    pub fn new(name: &str, channels: usize) -> Self {
        let mut state = LayerState::new();
        state.add_param("gamma", Tensor::full(&[channels], 1.0));
        state.add_param("beta", Tensor::zeros(&[channels]));
        state.add_running_stat("running_mean", Tensor::zeros(&[channels]));
        state.add_running_stat("running_var", Tensor::full(&[channels], 1.0));
        BatchNorm {
            name: name.to_string(),
            channels,
            state,
            cache: None,
        }
    }

    fn check(&self, shape: &[usize]) -> Result<(usize, usize)> {
        if shape.len() < 2 || shape[1] != self.channels {
            return Err(Error::shape("batch norm", shape, &[0, self.channels]));
        }
        Ok((shape[0], shape[2..].iter().product()))
    }
}

impl Layer for BatchNorm {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (batch, inner) = self.check(input.shape())?;
        let c_count = self.channels;
        let x = input.data();
        let train = self.state.is_train();
        let mut mean = vec![0.0; c_count];
        let mut var = vec![0.0; c_count];
        if train {
            let count = (batch * inner) as f64;
            for b in 0..batch {
                for c in 0..c_count {
                    let base = (b * c_count + c) * inner;
                    mean[c] += x[base..base + inner].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for b in 0..batch {
                for c in 0..c_count {
                    let base = (b * c_count + c) * inner;
                    let m = mean[c];
                    var[c] += x[base..base + inner]
                        .iter()
                        .map(|&v| (v - m) * (v - m))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            if !self.state.freeze_running_stats {
                let unbiased = if count > 1.0 {
                    count / (count - 1.0)
                } else {
                    1.0
                };
                let rs = &mut self.state.running_stats;
                let rm = rs.get_mut("running_mean").unwrap().data_mut();
                for (r, &m) in rm.iter_mut().zip(&mean) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
                }
                let rv = rs.get_mut("running_var").unwrap().data_mut();
                for (r, &v) in rv.iter_mut().zip(&var) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v * unbiased;
                }
            }
        } else {
            mean.copy_from_slice(self.state.running_stats["running_mean"].data());
            var.copy_from_slice(self.state.running_stats["running_var"].data());
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gamma = self.state.param("gamma").data();
        let beta = self.state.param("beta").data();
        let mut normalized = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..batch {
            for c in 0..c_count {
                let base = (b * c_count + c) * inner;
                let (m, s, g, bt) = (mean[c], inv_std[c], gamma[c], beta[c]);
                for i in base..base + inner {
                    let n = (x[i] - m) * s;
                    normalized[i] = n;
                    out[i] = g * n + bt;
                }
            }
        }
        self.cache = Some(BnCache {
            shape: input.shape().to_vec(),
            normalized,
            inv_std,
            train,
        });
        let out = Tensor::from_parts(input.shape().to_vec(), out);
        debug_check_finite(&out, &self.name);
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| missing_forward(&self.name))?;
        if grad_output.shape() != cache.shape.as_slice() {
            return Err(Error::shape(
                "batch norm backward",
                grad_output.shape(),
                &cache.shape,
            ));
        }
        let (batch, inner) = (cache.shape[0], cache.shape[2..].iter().product::<usize>());
        let c_count = self.channels;
        let dy = grad_output.data();
        let xn = &cache.normalized;

        let mut sum_dy = vec![0.0; c_count];
        let mut sum_dy_xn = vec![0.0; c_count];
        for b in 0..batch {
            for c in 0..c_count {
                let base = (b * c_count + c) * inner;
                for i in base..base + inner {
                    sum_dy[c] += dy[i];
                    sum_dy_xn[c] += dy[i] * xn[i];
                }
            }
        }
        {
            let grads = &mut self.state.grads;
            for (g, s) in grads
                .get_mut("gamma")
                .unwrap()
                .data_mut()
                .iter_mut()
                .zip(&sum_dy_xn)
            {
                *g += s;
            }
            for (g, s) in grads
                .get_mut("beta")
                .unwrap()
                .data_mut()
                .iter_mut()
                .zip(&sum_dy)
            {
                *g += s;
            }
        }
        let gamma = self.state.param("gamma").data();
        let count = (batch * inner) as f64;
        let mut dx = vec![0.0; dy.len()];
        for b in 0..batch {
            for c in 0..c_count {
                let base = (b * c_count + c) * inner;
                let scale = gamma[c] * cache.inv_std[c];
                if cache.train {
                    let mdy = sum_dy[c] / count;
                    let mdyx = sum_dy_xn[c] / count;
                    for i in base..base + inner {
                        dx[i] = scale * (dy[i] - mdy - xn[i] * mdyx);
                    }
                } else {
                    for i in base..base + inner {
                        dx[i] = scale * dy[i];
                    }
                }
            }
        }
        Ok(Tensor::from_parts(cache.shape.clone(), dx))
    }

    fn visit_states(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut LayerState)) {
        f(&join_path(prefix, &self.name), &mut self.state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::Mode;

    fn sample() -> Tensor {
        Tensor::new(
            vec![2, 2, 3],
            vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0, 5.0, 6.0, 7.0, 2.0, 2.0, 2.0],
        )
        .unwrap()
    }

    #[test]
    fn train_output_is_standardised_per_channel() {
        let mut bn = BatchNorm::new("bn", 2);
        let y = bn.forward(&sample()).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| (0..3).map(move |i| (b, i)))
                .map(|(b, i)| y.get(&[b, c, i]))
                .collect();
            let mean = vals.iter().sum::<f64>() / 6.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_follow_momentum_and_freeze() {
        let mut bn = BatchNorm::new("bn", 2);
        bn.forward(&sample()).unwrap();
        // channel 0 batch mean = (1+2+3+5+6+7)/6 = 4
        let rm = bn.state().running_stats["running_mean"].data()[0];
        assert!((rm - 0.4).abs() < 1e-12);
        bn.state_mut().freeze_running_stats = true;
        bn.forward(&sample()).unwrap();
        assert_eq!(bn.state().running_stats["running_mean"].data()[0], rm);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut bn = BatchNorm::new("bn", 2);
        bn.set_mode(Mode::Eval);
        let x = sample();
        let y = bn.forward(&x).unwrap();
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * s).abs() < 1e-15);
        }
    }
}
