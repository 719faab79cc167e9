use crate::error::{arg, shape, Result};
use crate::tensor::{Real, Tensor};

/// `-log softmax(logits)[label]` and its gradient `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 1 {
        return Err(shape(format!("logits must be a vector, got {:?}", logits.shape())));
    }
    let (loss, grad) = row_loss(logits.data(), label)?;
    Ok((loss, Tensor::vector(grad)))
}

fn row_loss<T: Real>(row: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= row.len() {
        return Err(arg(format!("label {label} out of range for {} classes", row.len())));
    }
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln() - (row[label] - max);
    let mut grad: Vec<T> = exps.into_iter().map(|e| e / sum).collect();
    grad[label] = grad[label] - T::one();
    Ok((loss, grad))
}

/// Per-row cross-entropy of a `[B, C]` logit batch and the (unscaled) gradient.
pub fn cross_entropy_rows<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(Vec<T>, Tensor<T>)> {
    let classes = *logits.shape().last().expect("nonempty shape");
    let batch = logits.len() / classes;
    if labels.len() != batch {
        return Err(shape(format!("{} labels for {batch} rows of logits", labels.len())));
    }
    let mut losses = Vec::with_capacity(batch);
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.data().chunks_exact(classes).zip(labels) {
        let (l, g) = row_loss(row, y)?;
        losses.push(l);
        grad.extend(g);
    }
    Ok((losses, Tensor::new(vec![batch, classes], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn uniform_logits() {
        let (loss, grad) = softmax_cross_entropy(&Tensor::vector(vec![0.0; 10]), 3).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((grad.data()[3] + 0.9).abs() < 1e-12);
        assert!((grad.data()[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn large_logit_is_stable() {
        let mut l = vec![0.0f64; 10];
        l[0] = 1000.0;
        let (loss, grad) = softmax_cross_entropy(&Tensor::vector(l), 0).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-12);
        assert!(grad.data().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn label_out_of_range() {
        assert!(softmax_cross_entropy(&Tensor::vector(vec![0.0; 10]), 10).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(2);
        for trial in 0..20 {
            let logits: Vec<f64> = (0..10).map(|_| 3.0 * rng.standard_normal()).collect();
            let label = trial % 10;
            let (_, grad) = softmax_cross_entropy(&Tensor::vector(logits.clone()), label).unwrap();
            let h = 1e-6;
            for j in 0..10 {
                let mut up = logits.clone();
                up[j] += h;
                let mut dn = logits.clone();
                dn[j] -= h;
                let fu = softmax_cross_entropy(&Tensor::vector(up), label).unwrap().0;
                let fdn = softmax_cross_entropy(&Tensor::vector(dn), label).unwrap().0;
                let fd = (fu - fdn) / (2.0 * h);
                let g = grad.data()[j];
                assert!((fd - g).abs() <= 1e-6 * g.abs().max(1e-3), "{fd} vs {g}");
            }
        }
    }

    #[test]
    fn rows_match_single() {
        let logits = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let (losses, grad) = cross_entropy_rows(&logits, &[2, 0]).unwrap();
        let (l1, g1) = softmax_cross_entropy(&Tensor::vector(vec![-1.0, 0.0, 4.0]), 0).unwrap();
        assert_eq!(losses[1], l1);
        assert_eq!(&grad.data()[3..], g1.data());
    }
}
