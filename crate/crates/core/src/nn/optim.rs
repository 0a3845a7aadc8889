use std::collections::BTreeMap;

use super::layer::LayerState;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// SGD with Nesterov momentum and L2 weight decay folded into the gradient:
///
/// ```text
/// g ← g + wd·p
/// v ← μ·v − lr·g
/// p ← p + μ·v − lr·g
/// ```
#[derive(Debug, Clone)]
pub struct SgdNesterov {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl SgdNesterov {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum {momentum} not in [0, 1)")));
        }
        Ok(SgdNesterov {
            learning_rate,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        })
    }

    pub fn velocity(&self, key: &str) -> Option<&Tensor> {
        self.velocity.get(key)
    }

    /// Updates every parameter of `layer`; velocities are keyed by `scope.param`.
    pub fn step(&mut self, scope: &str, layer: &mut LayerState) {
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        for (name, param) in layer.params.iter_mut() {
            let grad = &layer.grads[name];
            let key = format!("{scope}.{name}");
            let v = self
                .velocity
                .entry(key)
                .or_insert_with(|| Tensor::zeros(param.shape()));
            let p = param.data_mut();
            let v = v.data_mut();
            for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(grad.data()) {
                let g = gi + wd * *pi;
                *vi = mu * *vi - lr * g;
                *pi += mu * *vi - lr * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_layer(p: f64, g: f64) -> LayerState {
        let mut s = LayerState::new();
        s.add_param("w", Tensor::scalar(p));
        s.grad_mut("w").data_mut()[0] = g;
        s
    }

    #[test]
    fn plain_sgd_step() {
        let mut opt = SgdNesterov::new(0.1, 0.0, 0.0).unwrap();
        let mut s = scalar_layer(1.0, 1.0);
        opt.step("l", &mut s);
        assert!((s.param("w").data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_keeps_params_and_decays_velocity() {
        let mut opt = SgdNesterov::new(0.1, 0.9, 0.0).unwrap();
        let mut s = scalar_layer(2.0, 1.0);
        opt.step("l", &mut s);
        let v1 = opt.velocity("l.w").unwrap().data()[0];
        let p1 = s.param("w").data()[0];
        // From zero velocity a zero gradient is a fixed point.
        let mut fresh = SgdNesterov::new(0.1, 0.9, 0.0).unwrap();
        let mut z = scalar_layer(2.0, 0.0);
        fresh.step("l", &mut z);
        assert_eq!(z.param("w").data()[0], 2.0);
        // With accumulated velocity, v decays by exactly μ.
        s.zero_grads();
        opt.step("l", &mut s);
        assert_eq!(opt.velocity("l.w").unwrap().data()[0], 0.9 * v1);
        assert_eq!(s.param("w").data()[0], p1 + 0.9 * (0.9 * v1));
    }

    #[test]
    fn two_steps_on_quadratic_match_scalar_simulation() {
        // f(p) = 0.5·a·p², g = a·p
        let (a, lr, mu, wd) = (3.0, 0.05, 0.9, 1e-4);
        let mut opt = SgdNesterov::new(lr, mu, wd).unwrap();
        let mut s = scalar_layer(1.5, 0.0);
        let (mut p, mut v) = (1.5f64, 0.0f64);
        for _ in 0..2 {
            let cur = s.param("w").data()[0];
            s.grad_mut("w").data_mut()[0] = a * cur;
            opt.step("l", &mut s);
            s.zero_grads();

            let g = a * p + wd * p;
            v = mu * v - lr * g;
            p = p + mu * v - lr * g;
        }
        assert!((s.param("w").data()[0] - p).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_momentum() {
        assert!(SgdNesterov::new(0.1, 1.0, 0.0).is_err());
    }
}
