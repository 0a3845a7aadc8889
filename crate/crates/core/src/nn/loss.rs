use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Softmax along `axis`, with max-subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.ndim() {
        return Err(Error::invalid(format!(
            "softmax axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    let n = x.dim(axis);
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let m = (0..n)
                .map(|k| src[idx(k)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..n {
                let e = (src[idx(k)] - m).exp();
                out[idx(k)] = e;
                z += e;
            }
            for k in 0..n {
                out[idx(k)] /= z;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Softmax of a single logit row.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub loss: f64,
    /// `(softmax - onehot) / batch`, shaped like the logits.
    pub grad: Tensor,
}

/// Softmax cross-entropy on `[batch × classes]` logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<CrossEntropy> {
    if logits.ndim() != 2 || logits.dim(0) != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            logits.shape(),
            &[labels.len(), 0],
        ));
    }
    let (b, c) = (logits.dim(0), logits.dim(1));
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: c,
        });
    }
    let mut grad = vec![0.0; b * c];
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits.data()[r * c..(r + 1) * c];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        let log_z = m + z.ln();
        total += log_z - row[label];
        for k in 0..c {
            grad[r * c + k] = (row[k] - log_z).exp() / b as f64;
        }
        grad[r * c + label] -= 1.0 / b as f64;
    }
    Ok(CrossEntropy {
        loss: total / b as f64,
        grad: Tensor::from_parts(vec![b, c], grad),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn uniform_and_overflow_cases() {
        let s = softmax(&row(&[0.0, 0.0, 0.0]), 1).unwrap();
        for &p in s.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&row(&[1000.0, 0.0]), 1).unwrap();
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);
    }

    #[test]
    fn matches_direct_exponentials() {
        let s = softmax(&row(&[1.0, 2.0, 3.0]), 1).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (k, &p) in s.data().iter().enumerate() {
            assert!((p - ((k + 1) as f64).exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_on_inner_axis() {
        let x = Tensor::new(vec![2, 3, 2], (0..12).map(|v| v as f64 * 0.7).collect()).unwrap();
        let s = softmax(&x, 1).unwrap();
        for o in 0..2 {
            for i in 0..2 {
                let col: f64 = (0..3).map(|k| s.get(&[o, k, i])).sum();
                assert!((col - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let ce = cross_entropy(&Tensor::zeros(&[3, 60]), &[0, 5, 59]).unwrap();
        assert!((ce.loss - 60f64.ln()).abs() < 1e-12);
        let ce = cross_entropy(&row(&[10.0, 0.0, 0.0]), &[0]).unwrap();
        let expect = (1.0 + 2.0 * (-10.0f64).exp()).ln();
        assert!((ce.loss - expect).abs() < 1e-15);
        assert!((ce.loss - 9.08e-5).abs() < 1e-7);
    }

    #[test]
    fn cross_entropy_gradient_matches_central_differences() {
        let logits =
            Tensor::new(vec![2, 4], vec![0.3, -1.2, 2.0, 0.1, 1.5, 0.2, -0.7, 0.9]).unwrap();
        let labels = [2, 0];
        let ce = cross_entropy(&logits, &labels).unwrap();
        let eps = 1e-5;
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p.data_mut()[i] += eps;
            let mut m = logits.clone();
            m.data_mut()[i] -= eps;
            let fd = (cross_entropy(&p, &labels).unwrap().loss
                - cross_entropy(&m, &labels).unwrap().loss)
                / (2.0 * eps);
            let an = ce.grad.data()[i];
            assert!(
                (fd - an).abs() / an.abs().max(fd.abs()) < 1e-6,
                "{i}: {fd} vs {an}"
            );
        }
    }

    #[test]
    fn label_out_of_range() {
        let err = cross_entropy(&Tensor::zeros(&[1, 3]), &[3]).unwrap_err();
        assert!(matches!(
            err,
            Error::LabelOutOfRange {
                label: 3,
                classes: 3
            }
        ));
    }
}
