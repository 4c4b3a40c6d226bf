use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Row-wise softmax of `(n, k, 1, 1)` logits with max subtraction.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.shape().c;
    let mut p = logits.clone();
    for row in p.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    p
}

fn check_labels<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::Shape(format!("logits {s} are not (n, k, 1, 1)")));
    }
    if labels.len() != s.n {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s.c) {
        return Err(Error::Data(format!("label {bad} outside [0, {})", s.c)));
    }
    Ok(s.c)
}

/// Mean over the batch of `−ln p(true class)`, computed from log-sum-exp so
/// large logits cannot overflow. Also returns the softmax probabilities.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let k = check_labels(logits, labels)?;
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        total += (lse - row[label]).f64();
    }
    Ok((T::lit(total / labels.len() as f64), softmax(logits)))
}

/// Gradient of the mean cross-entropy with respect to the logits: `(p − onehot)/n`.
pub fn softmax_cross_entropy_backward<T: Real>(probabilities: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let k = check_labels(probabilities, labels)?;
    let inv_n = T::one() / T::lit(labels.len() as f64);
    let mut g = probabilities.clone();
    for (row, &label) in g.data_mut().chunks_exact_mut(k).zip(labels) {
        row[label] -= T::one();
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn uniform_logits_give_ln3() {
        let l = Tensor::<f64>::filled(Shape4::of(2, 3, 1, 1), 0.7);
        let (loss, p) = softmax_cross_entropy(&l, &[0, 2]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_margin_is_stable() {
        let l = Tensor::from_vec(Shape4::of(1, 3, 1, 1), vec![1000.0f32, 0.0, 0.0]).unwrap();
        let (loss, p) = softmax_cross_entropy(&l, &[0]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-6);
        assert!(p.all_finite());
    }

    #[test]
    fn matches_high_precision_oracle() {
        let rows = [
            [0.5, -1.25, 2.0],
            [3.5, 3.25, -0.75],
            [-2.0, 0.0, 1.5],
            [10.0, -10.0, 0.25],
            [0.125, 0.375, -0.625],
        ];
        let l = Tensor::from_vec(Shape4::of(5, 3, 1, 1), rows.concat()).unwrap();
        let (loss, p) = softmax_cross_entropy::<f64>(&l, &[2, 0, 1, 1, 2]).unwrap();
        // 40-digit evaluation of the same definition.
        assert!((loss - 4.861_266_269_991_206).abs() < 1e-8);
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn label_out_of_range() {
        let l = Tensor::<f64>::zeros(Shape4::of(1, 3, 1, 1));
        assert!(softmax_cross_entropy(&l, &[3]).is_err());
        assert!(softmax_cross_entropy(&l, &[0, 1]).is_err());
    }
}
