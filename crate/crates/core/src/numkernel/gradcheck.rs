//! Central finite-difference validation of analytic gradients.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::loss::{cross_entropy_logit_grad, cross_entropy_rows};
use super::matrix::Matrix;
use super::mlp::{Gradients, Mlp};

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const ABS_FLOOR: f64 = 1e-4;

/// Max over all parameters of `|a − n| / max(|a|, |n|, ABS_FLOOR)` where `a` is
/// the analytic and `n` the central-difference derivative of `loss`.
pub fn max_relative_error<T, F>(
    model: &Mlp<T>,
    analytic: &Gradients<T>,
    epsilon: f64,
    loss: F,
) -> Result<T>
where
    T: Scalar,
    F: Fn(&Mlp<T>) -> Result<T>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::Argument(format!(
            "epsilon must lie in (0, 1e-3], got {epsilon}"
        )));
    }
    let eps = T::lit(epsilon);
    let flat = analytic.flatten();
    let mut probe = model.clone();
    let mut worst = T::zero();
    for (idx, &a) in flat.iter().enumerate() {
        let orig = model.param(idx);
        probe.set_param(idx, orig + eps);
        let plus = loss(&probe)?;
        probe.set_param(idx, orig - eps);
        let minus = loss(&probe)?;
        probe.set_param(idx, orig);
        let numeric = (plus - minus) / (eps + eps);
        let denom = a.abs().max(numeric.abs()).max(T::lit(ABS_FLOOR));
        let err = (a - numeric).abs() / denom;
        if err > worst || err.is_nan() {
            worst = err;
        }
    }
    Ok(worst)
}

/// Mean cross-entropy of `batch` and its analytic gradient.
pub fn mean_ce_with_grad<T: Scalar>(
    model: &Mlp<T>,
    batch: &Matrix<T>,
    labels: &[usize],
) -> Result<(T, Gradients<T>)> {
    let trace = model.forward_trace(batch)?;
    let losses = cross_entropy_rows(&trace.probs, labels)?;
    let n = T::from_count(labels.len().max(1));
    let dlogits = cross_entropy_logit_grad(&trace.probs, labels, T::one() / n)?;
    let grads = model.backward(&trace, &dlogits)?;
    Ok((losses.into_iter().sum::<T>() / n, grads))
}

/// Checks the backpropagated mean cross-entropy gradient against finite differences.
pub fn grad_check<T: Scalar>(
    model: &Mlp<T>,
    batch: &Matrix<T>,
    labels: &[usize],
    epsilon: f64,
) -> Result<T> {
    let (_, grads) = mean_ce_with_grad(model, batch, labels)?;
    max_relative_error(model, &grads, epsilon, |m| {
        let probs = m.forward(batch)?.probs;
        let losses = cross_entropy_rows(&probs, labels)?;
        Ok(losses.into_iter().sum::<T>() / T::from_count(labels.len().max(1)))
    })
}
