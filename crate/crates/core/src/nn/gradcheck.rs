//! Central finite-difference verification of analytic gradients.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{Layer, LayerState};
use super::tensor::Tensor;
use crate::error::Result;

/// Gradients below this magnitude are compared on an absolute scale.
///
/// Some gradients are identically zero (a bias feeding a train-mode batch
/// norm), where the finite difference is pure round-off.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Tensors whose gradients are smaller than this fraction of the largest
/// gradient in the check are measured against that fraction instead.
pub const RELATIVE_FLOOR: f64 = 1e-2;

/// A scalar function of an input tensor and a set of named layer states.
pub trait Objective {
    /// Objective value at the current parameters. Must not touch gradients.
    fn value(&mut self, input: &Tensor) -> Result<f64>;

    /// Zeroes gradients, evaluates, back-propagates. Parameter gradients are
    /// left in the states; the input gradient is returned.
    fn value_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)>;

    /// Visits every layer state with its path.
    fn visit_states(&mut self, f: &mut dyn FnMut(&str, &mut LayerState));
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub count: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<GradCheckEntry>,
    pub input: GradCheckEntry,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .chain(std::iter::once(&self.input))
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn entries(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.params.iter().chain(std::iter::once(&self.input))
    }
}

/// Compares analytic and numerical gradient tensors: the largest entrywise
/// difference relative to the larger of the two infinity norms, never less
/// than `floor`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, f64) {
    let mut max_abs = 0.0f64;
    let mut scale = floor.max(GRAD_FLOOR);
    for (&a, &n) in analytic.iter().zip(numeric) {
        max_abs = max_abs.max((a - n).abs());
        scale = scale.max(a.abs()).max(n.abs());
    }
    (max_abs, max_abs / scale)
}

fn set_entry(obj: &mut dyn Objective, full: &str, idx: usize, value: f64) {
    obj.visit_states(&mut |path, state| {
        for (pname, p) in state.params.iter_mut() {
            if qualified(path, pname) == full {
                p.data_mut()[idx] = value;
            }
        }
    });
}

pub fn qualified(path: &str, param: &str) -> String {
    if path.is_empty() {
        param.to_string()
    } else {
        format!("{path}.{param}")
    }
}

/// Runs the check for every parameter entry and every input entry.
///
/// Running statistics are frozen for the duration and restored afterwards.
pub fn grad_check(
    obj: &mut dyn Objective,
    input: &Tensor,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let mut frozen = Vec::new();
    obj.visit_states(&mut |_, s| {
        frozen.push(s.freeze_running_stats);
        s.freeze_running_stats = true;
    });

    let result = run_check(obj, input, epsilon);

    let mut it = frozen.into_iter();
    obj.visit_states(&mut |_, s| {
        s.freeze_running_stats = it.next().unwrap_or(false);
    });
    result
}

fn run_check(obj: &mut dyn Objective, input: &Tensor, eps: f64) -> Result<GradCheckReport> {
    let (_, input_grad) = obj.value_and_grad(input)?;
    let mut analytic: Vec<(String, Tensor, Tensor)> = Vec::new();
    obj.visit_states(&mut |path, state| {
        for (pname, p) in &state.params {
            analytic.push((
                qualified(path, pname),
                p.clone(),
                state.grads[pname].clone(),
            ));
        }
    });

    let mut numerics = Vec::with_capacity(analytic.len());
    for (full, original, _) in &analytic {
        let mut numeric = vec![0.0; original.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let x0 = original.data()[i];
            set_entry(obj, full, i, x0 + eps);
            let fp = obj.value(input)?;
            set_entry(obj, full, i, x0 - eps);
            let fm = obj.value(input)?;
            set_entry(obj, full, i, x0);
            *slot = (fp - fm) / (2.0 * eps);
        }
        numerics.push(numeric);
    }

    let mut numeric = vec![0.0; input.len()];
    let mut probe = input.clone();
    for (i, slot) in numeric.iter_mut().enumerate() {
        let x0 = input.data()[i];
        probe.data_mut()[i] = x0 + eps;
        let fp = obj.value(&probe)?;
        probe.data_mut()[i] = x0 - eps;
        let fm = obj.value(&probe)?;
        probe.data_mut()[i] = x0;
        *slot = (fp - fm) / (2.0 * eps);
    }
    let largest = analytic
        .iter()
        .flat_map(|(_, _, g)| g.data())
        .chain(input_grad.data())
        .fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = RELATIVE_FLOOR * largest;
    let entry = |name: &str, a: &[f64], n: &[f64]| {
        let (abs, rel) = relative_error(a, n, floor);
        GradCheckEntry {
            name: name.to_string(),
            count: a.len(),
            max_abs_error: abs,
            max_rel_error: rel,
        }
    };
    let params = analytic
        .iter()
        .zip(&numerics)
        .map(|((full, _, grad), n)| entry(full, grad.data(), n))
        .collect();
    Ok(GradCheckReport {
        params,
        input: entry("input", input_grad.data(), &numeric),
    })
}

/// Wraps a single layer as the objective `Σ r ⊙ layer(x)` with a fixed,
/// seeded random projection `r` (drawn once the output shape is known).
pub struct LayerObjective<L: Layer> {
    pub layer: L,
    seed: u64,
    projection: Option<Tensor>,
}

impl<L: Layer> LayerObjective<L> {
    pub fn new(layer: L, seed: u64) -> Self {
        LayerObjective {
            layer,
            seed,
            projection: None,
        }
    }

    fn projection_for(&mut self, out: &Tensor) -> Tensor {
        if let Some(p) = &self.projection {
            if p.shape() == out.shape() {
                return p.clone();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let data = (0..out.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let p = Tensor::from_parts(out.shape().to_vec(), data);
        self.projection = Some(p.clone());
        p
    }
}

impl<L: Layer> Objective for LayerObjective<L> {
    fn value(&mut self, input: &Tensor) -> Result<f64> {
        let out = self.layer.forward(input)?;
        let r = self.projection_for(&out);
        Ok(out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    }

    fn value_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)> {
        self.layer.zero_grads();
        let out = self.layer.forward(input)?;
        let r = self.projection_for(&out);
        let v = out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        let g = self.layer.backward(&r)?;
        Ok((v, g))
    }

    fn visit_states(&mut self, f: &mut dyn FnMut(&str, &mut LayerState)) {
        self.layer.visit_states("", f);
    }
}

/// Negative control: scales every analytic gradient by `factor`.
pub struct Corrupted<O> {
    pub inner: O,
    pub factor: f64,
}

impl<O: Objective> Objective for Corrupted<O> {
    fn value(&mut self, input: &Tensor) -> Result<f64> {
        self.inner.value(input)
    }

    fn value_and_grad(&mut self, input: &Tensor) -> Result<(f64, Tensor)> {
        let (v, g) = self.inner.value_and_grad(input)?;
        let factor = self.factor;
        self.inner.visit_states(&mut |_, s| {
            for g in s.grads.values_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= factor);
            }
        });
        Ok((v, g.scale(factor)))
    }

    fn visit_states(&mut self, f: &mut dyn FnMut(&str, &mut LayerState)) {
        self.inner.visit_states(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{activation::Relu, batchnorm::BatchNorm, dense::Dense};

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn linear_layer_is_exact_to_roundoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut obj = LayerObjective::new(Dense::new("fc", 4, 3, &mut rng), 2);
        let report = grad_check(&mut obj, &random(&[5, 4], 3), 1e-5).unwrap();
        assert_eq!(report.params.len(), 2);
        assert!(report.max_rel_error() < 1e-9, "{report:?}");
    }

    #[test]
    fn batch_norm_passes_and_running_stats_are_restored() {
        let mut obj = LayerObjective::new(BatchNorm::new("bn", 3), 4);
        let x = random(&[2, 3, 4, 2], 5);
        let report = grad_check(&mut obj, &x, 1e-5).unwrap();
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
        // Frozen during the check: still at initial values.
        assert_eq!(obj.layer.state().running_stats["running_mean"].sum(), 0.0);
        assert!(!obj.layer.state().freeze_running_stats);
    }

    #[test]
    fn parameterless_layer_has_empty_param_report() {
        let mut obj = LayerObjective::new(Relu::new("relu"), 6);
        let report = grad_check(&mut obj, &random(&[3, 7], 7), 1e-5).unwrap();
        assert!(report.params.is_empty());
        assert_eq!(report.input.count, 21);
        assert!(report.input.max_rel_error < 1e-6);
    }

    #[test]
    fn corrupted_gradients_are_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut obj = Corrupted {
            inner: LayerObjective::new(Dense::new("fc", 3, 2, &mut rng), 2),
            factor: 1.01,
        };
        let report = grad_check(&mut obj, &random(&[2, 3], 3), 1e-5).unwrap();
        assert!(!report.passed(1e-4));
    }
}
