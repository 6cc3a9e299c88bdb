use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::matrix::Matrix;

/// Probabilities are clamped here before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-wise numerically stable softmax, in place.
pub fn softmax_rows<T: Scalar>(logits: &mut Matrix<T>) {
    let cols = logits.cols();
    if cols == 0 {
        return;
    }
    for r in 0..logits.rows() {
        let row = logits.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// `-ln(probs[label])`, with the probability clamped at [`PROB_FLOOR`].
pub fn cross_entropy<T: Scalar>(probs: &[T], label: usize) -> Result<T> {
    let p = *probs.get(label).ok_or(Error::Index {
        index: label,
        len: probs.len(),
    })?;
    Ok(-p.max(T::lit(PROB_FLOOR)).ln())
}

/// Per-row cross-entropy for a probability matrix.
pub fn cross_entropy_rows<T: Scalar>(probs: &Matrix<T>, labels: &[usize]) -> Result<Vec<T>> {
    if labels.len() != probs.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            probs.rows()
        )));
    }
    probs
        .iter_rows()
        .zip(labels)
        .map(|(row, &l)| cross_entropy(row, l))
        .collect()
}

/// Gradient of `scale · Σ_rows CE` with respect to the logits: `scale · (p − onehot)`.
pub fn cross_entropy_logit_grad<T: Scalar>(
    probs: &Matrix<T>,
    labels: &[usize],
    scale: T,
) -> Result<Matrix<T>> {
    let mut g = probs.clone();
    for (r, &l) in labels.iter().enumerate() {
        let row = g.row_mut(r);
        if l >= row.len() {
            return Err(Error::Index {
                index: l,
                len: row.len(),
            });
        }
        row[l] -= T::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok(g)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cross_entropy_closed_forms() {
        assert_eq!(cross_entropy(&[1.0, 0.0, 0.0, 0.0], 0).unwrap(), 0.0);
        let u = cross_entropy(&[0.25f64; 4], 2).unwrap();
        assert!((u - 1.386_294_361_119_890_6).abs() < 1e-12);
        let c = cross_entropy(&[0.5f64, 0.3, 0.1, 0.1], 1).unwrap();
        assert!((c - 1.203_972_804_325_935_9).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        assert!(matches!(
            cross_entropy(&[0.5f64, 0.5], 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let l = cross_entropy(&[1.0f64, 0.0], 1).unwrap();
        assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5, 0.0]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(row in proptest::collection::vec(-700.0f64..700.0, 1..12)) {
            let n = row.len();
            let mut m = Matrix::from_vec(1, n, row).unwrap();
            softmax_rows(&mut m);
            let s: f64 = m.row(0).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(m.row(0).iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn cross_entropy_nonnegative(
            raw in proptest::collection::vec(0.0f64..1.0, 2..8),
            pick in 0usize..8,
        ) {
            let s: f64 = raw.iter().sum::<f64>() + 1e-9;
            let probs: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let label = pick % probs.len();
            let l = cross_entropy(&probs, label).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, probs[label] == 1.0);
        }
    }
}
