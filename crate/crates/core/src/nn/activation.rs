//! Softmax and the categorical log-likelihood used by the teacher.

use crate::real::Real;
use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction, so large logits never overflow.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    let width = logits.row_len();
    for row in out.data_mut().chunks_exact_mut(width) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Row-wise log-softmax.
pub fn log_softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    let width = logits.row_len();
    for row in out.data_mut().chunks_exact_mut(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Summed categorical NLL `Σ_i −ln softmax(z_i)[y_i]` and its gradient w.r.t. the logits.
pub fn nll_loss<T: Real>(logits: &Tensor<T>, labels: &[u8]) -> (f64, Tensor<T>) {
    assert_eq!(logits.batch_size(), labels.len(), "one label per logit row");
    let log_probs = log_softmax(logits);
    let mut grad = log_probs.clone();
    let width = logits.row_len();
    let mut loss = 0.0;
    for ((lp, g), &y) in log_probs.rows().zip(grad.data_mut().chunks_exact_mut(width)).zip(labels) {
        loss -= lp[y as usize].as_f64();
        for v in g.iter_mut() {
            *v = v.exp();
        }
        g[y as usize] -= T::one();
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn zeros_give_uniform() {
        let p = softmax(&row(&[0.0; 10]));
        for &v in p.data() {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn log_three_offset_gives_quarter_split() {
        for c in [-50.0, 0.0, 3.7, 900.0] {
            let p = softmax(&row(&[c, c + 3f64.ln()]));
            assert!((p.data()[0] - 0.25).abs() < 1e-12);
            assert!((p.data()[1] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let p = softmax(&row(&[1000.0, 0.0]));
        assert!(p.all_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
        assert!(p.data()[1] < 1e-300);
        let p = softmax(&row(&[1e4, -1e4, 0.0]));
        assert!(p.all_finite());
    }

    #[test]
    fn nll_gradient_is_probs_minus_onehot() {
        let logits = Tensor::<f64>::new(vec![2, 3], vec![0.1, 0.2, 0.3, 1.0, -1.0, 0.0]).unwrap();
        let (loss, grad) = nll_loss(&logits, &[2, 0]);
        let p = softmax(&logits);
        let expect = -(p.data()[2].ln() + p.data()[3].ln());
        assert!((loss - expect).abs() < 1e-12);
        assert!((grad.data()[2] - (p.data()[2] - 1.0)).abs() < 1e-15);
        assert!((grad.data()[4] - p.data()[4]).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_and_shift_invariant(
            logits in prop::collection::vec(-1e4f64..1e4, 2..12),
            shift in -1e3f64..1e3,
        ) {
            let p = softmax(&row(&logits));
            let sum: f64 = p.data().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.data().iter().all(|&v| v >= 0.0));
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let q = softmax(&row(&shifted));
            for (a, b) in p.data().iter().zip(q.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
