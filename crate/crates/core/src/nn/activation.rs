use super::layer::{join_path, missing_forward, Layer, LayerState};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Relu {
    name: String,
    state: LayerState,
    mask: Option<Tensor>,
}

impl Relu {
    pub fn state(&self) -> &LayerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut LayerState {
        &mut self.state
    }

    pub fn new(name: &str) -> Self {
        Relu {
            name: name.to_string(),
            ..Default::default()
        }
    }
}

impl Layer for Relu {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.mask = Some(input.map(|x| if x > 0.0 { 1.0 } else { 0.0 }));
        Ok(input.map(|x| x.max(0.0)))
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| missing_forward(&self.name))?;
        if mask.shape() != grad_output.shape() {
            return Err(Error::shape(
                "relu backward",
                grad_output.shape(),
                mask.shape(),
            ));
        }
        grad_output.mul(mask)
    }

    fn visit_states(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut LayerState)) {
        f(&join_path(prefix, &self.name), &mut self.state);
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_backward() {
        let mut r = Relu::new("relu");
        let x = Tensor::new(vec![4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
        assert_eq!(r.forward(&x).unwrap().data(), &[0.0, 0.0, 0.5, 2.0]);
        let g = r.backward(&Tensor::full(&[4], 3.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 3.0, 3.0]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(-1000.0) < 1e-300);
        assert_eq!(sigmoid(1000.0), 1.0);
    }
}
