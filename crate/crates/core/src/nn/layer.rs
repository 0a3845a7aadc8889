use std::collections::BTreeMap;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Parameters, their gradients, and non-learned statistics of one layer.
#[derive(Debug, Clone, Default)]
pub struct LayerState {
    pub params: BTreeMap<String, Tensor>,
    pub grads: BTreeMap<String, Tensor>,
    pub running_stats: BTreeMap<String, Tensor>,
    pub mode: Mode,
    /// When set, train-mode forwards leave `running_stats` untouched.
    pub freeze_running_stats: bool,
}

impl LayerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter together with a zeroed gradient of the same shape.
    pub fn add_param(&mut self, name: &str, value: Tensor) {
        self.grads
            .insert(name.to_string(), Tensor::zeros(value.shape()));
        self.params.insert(name.to_string(), value);
    }

    pub fn add_running_stat(&mut self, name: &str, value: Tensor) {
        self.running_stats.insert(name.to_string(), value);
    }

    pub fn param(&self, name: &str) -> &Tensor {
        &self.params[name]
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Tensor {
        self.params.get_mut(name).expect("unknown parameter")
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.grads[name]
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut Tensor {
        self.grads.get_mut(name).expect("unknown parameter")
    }

    pub fn zero_grads(&mut self) {
        self.grads.values_mut().for_each(|g| g.fill(0.0));
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }
}

/// Forward/backward contract shared by every layer type, primitive or
/// composite.
///
/// `backward` must follow a matching `forward`; it adds parameter gradients
/// into the owning `LayerState`s and returns the gradient with respect to the
/// input. Calling it again after the same forward accumulates again.
pub trait Layer {
    fn name(&self) -> &str;
    fn forward(&mut self, input: &Tensor) -> Result<Tensor>;
    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor>;

    /// Visits every state owned by this layer with its dotted path.
    fn visit_states(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut LayerState));

    fn set_mode(&mut self, mode: Mode) {
        self.visit_states("", &mut |_, s| s.mode = mode);
    }

    fn zero_grads(&mut self) {
        self.visit_states("", &mut |_, s| s.zero_grads());
    }
}

pub fn join_path(prefix: &str, name: &str) -> String {
    match (prefix.is_empty(), name.is_empty()) {
        (true, _) => name.to_string(),
        (_, true) => prefix.to_string(),
        _ => format!("{prefix}.{name}"),
    }
}

pub(crate) fn missing_forward(name: &str) -> Error {
    Error::BackwardBeforeForward {
        layer: name.to_string(),
    }
}

/// Glorot-uniform initialisation: `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: rand::Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
