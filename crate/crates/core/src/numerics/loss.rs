use crate::error::{Error, Result};

use super::{Scalar, Tensor};

const PROB_CLAMP: f64 = 1e-7;

/// Mean softmax cross-entropy over `logits [N, K]`, with gradient `(softmax − onehot) / N`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, k) = match logits.dims() {
        &[n, k] => (n, k),
        d => return Err(Error::dim("softmax_xent rank", 2, d.len())),
    };
    if labels.len() != n {
        return Err(Error::dim("softmax_xent labels", n, labels.len()));
    }
    let mut grad = Tensor::zeros(logits.dims());
    let mut total = 0.0;
    for (i, row) in logits.data().chunks(k).enumerate() {
        let label = labels[i];
        if label >= k {
            return Err(Error::dim("softmax_xent label value", k - 1, label));
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += sum.ln() + max - row[label].as_f64();
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (j, e) in exps.iter().enumerate() {
            let onehot = if j == label { 1.0 } else { 0.0 };
            g[j] = T::of((e / sum - onehot) / n as f64);
        }
    }
    Ok((total / n as f64, grad))
}

/// Mean binary cross-entropy against a constant target; predictions are clamped away
/// from 0 and 1 before the logarithm.
pub fn bce<T: Scalar>(prediction: &Tensor<T>, target: f64) -> (f64, Tensor<T>) {
    let n = prediction.len() as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(prediction.dims());
    for (g, &p) in grad.data_mut().iter_mut().zip(prediction.data()) {
        let p = p.as_f64().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total += -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
        *g = T::of((p - target) / (p * (1.0 - p)) / n);
    }
    (total / n, grad)
}

/// Mean absolute error and its (sub)gradient with respect to `prediction`.
pub fn l1<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if prediction.dims() != target.dims() {
        return Err(Error::dim("l1 length", target.len(), prediction.len()));
    }
    let n = prediction.len() as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(prediction.dims());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(prediction.data()).zip(target.data()) {
        let d = (p - t).as_f64();
        total += d.abs();
        *g = T::of(if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        });
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln3() {
        let logits = Tensor::<f64>::full(&[4, 3], 0.7);
        let (loss, grad) = softmax_xent(&logits, &[0, 1, 2, 1]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        for row in grad.data().chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_correct_logit() {
        let logits = Tensor::<f64>::from_vec(&[1, 3], vec![10.0, -10.0, -10.0]).unwrap();
        let (loss, _) = softmax_xent(&logits, &[0]).unwrap();
        assert!(loss < 1e-4);
    }

    #[test]
    fn bce_reference_values() {
        let half = Tensor::<f64>::full(&[1], 0.5);
        assert!((bce(&half, 0.0).0 - 2f64.ln()).abs() < 1e-12);
        assert!((bce(&half, 1.0).0 - 2f64.ln()).abs() < 1e-12);
        let sure = Tensor::<f64>::full(&[1], 1.0 - 1e-7);
        assert!(bce(&sure, 1.0).0 <= 1.1e-7);
        let lo = Tensor::<f64>::full(&[1], 0.25);
        let hi = Tensor::<f64>::full(&[1], 0.75);
        assert!((bce(&lo, 0.0).0 - bce(&hi, 1.0).0).abs() < 1e-15);
    }

    #[test]
    fn bce_is_finite_at_the_extremes() {
        let p = Tensor::<f32>::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        let (loss, grad) = bce(&p, 1.0);
        assert!(loss.is_finite() && grad.all_finite());
    }
}
