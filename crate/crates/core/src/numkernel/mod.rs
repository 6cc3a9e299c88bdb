//! Dense numeric core: matrices, the feed-forward classifier and its
//! gradients, losses, SGD with polynomial decay, and gradient checking.

mod checkpoint;
mod gradcheck;
mod loss;
mod matrix;
mod mlp;
mod optim;

pub use checkpoint::{
    checkpoint_from_str, checkpoint_to_string, read_checkpoint, write_checkpoint, CHECKPOINT_HEADER,
};
pub use gradcheck::{grad_check, max_relative_error, mean_ce_with_grad, ABS_FLOOR};
pub use loss::{
    argmax, cross_entropy, cross_entropy_logit_grad, cross_entropy_rows, softmax_rows, PROB_FLOOR,
};
pub use matrix::Matrix;
pub use mlp::{Forward, Gradients, Mlp, Trace, DEFAULT_HIDDEN};
pub use optim::{per_sample_losses, sgd_step, OptimizerState, DEFAULT_BATCH_SIZE, DEFAULT_POWER};
