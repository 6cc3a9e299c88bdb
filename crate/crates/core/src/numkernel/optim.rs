use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::loss::{cross_entropy_logit_grad, cross_entropy_rows};
use super::matrix::Matrix;
use super::mlp::Mlp;

pub const DEFAULT_POWER: f64 = 0.9;
pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Plain SGD with polynomial learning-rate decay, stepped once per minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub lr0: f64,
    pub power: f64,
    pub step: usize,
    pub total_steps: usize,
    pub batch_size: usize,
}

impl OptimizerState {
    pub fn new(lr0: f64, power: f64, total_steps: usize, batch_size: usize) -> Result<Self> {
        if !(lr0 > 0.0 && lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {lr0}")));
        }
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::Config(format!("power must be positive, got {power}")));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(Self {
            lr0,
            power,
            step: 0,
            total_steps,
            batch_size,
        })
    }

    /// `lr0 · (1 − step / total_steps)^power`; zero once the horizon is reached.
    pub fn poly_lr(&self) -> f64 {
        if self.step >= self.total_steps {
            return 0.0;
        }
        self.lr0 * (1.0 - self.step as f64 / self.total_steps as f64).powf(self.power)
    }

    pub fn advance(&mut self) {
        self.step = (self.step + 1).min(self.total_steps);
    }
}

/// Cross-entropy losses for each row, no update.
pub fn per_sample_losses<T: Scalar>(
    model: &Mlp<T>,
    batch: &Matrix<T>,
    labels: &[usize],
) -> Result<Vec<T>> {
    let fwd = model.forward(batch)?;
    cross_entropy_rows(&fwd.probs, labels)
}

/// One SGD step on the mean cross-entropy of `batch` at the optimizer's current
/// learning rate. Returns the per-sample losses measured before the update.
/// The step counter is left alone; callers advance it.
pub fn sgd_step<T: Scalar>(
    model: &mut Mlp<T>,
    batch: &Matrix<T>,
    labels: &[usize],
    opt: &OptimizerState,
) -> Result<Vec<T>> {
    if batch.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            batch.rows(),
            labels.len()
        )));
    }
    if batch.rows() == 0 {
        return Ok(Vec::new());
    }
    let trace = model.forward_trace(batch)?;
    let losses = cross_entropy_rows(&trace.probs, labels)?;
    let scale = T::one() / T::from_count(batch.rows());
    let dlogits = cross_entropy_logit_grad(&trace.probs, labels, scale)?;
    let grads = model.backward(&trace, &dlogits)?;
    grads.check_finite()?;
    model.apply_gradients(&grads, T::lit(opt.poly_lr()));
    Ok(losses)
}
