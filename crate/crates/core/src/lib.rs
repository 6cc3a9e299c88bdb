//! Weakly supervised bag classification from noisy instance labels.
//!
//! Instances inherit their bag's label, so many of them are wrong. The pipeline
//! trains two small MLPs with co-teaching, keeps confident instances, filters
//! each class with the local outlier factor, fine-tunes with a bag-level loss
//! and finally fuses one-vs-rest models with grid-searched weights.

pub mod coteach;
pub mod error;
pub mod evalreport;
pub mod fusion;
pub mod lofdenoise;
pub mod miltrain;
pub mod numkernel;
pub mod pipeline;
pub mod resample;
pub mod rng;
pub mod scalar;
pub mod synthdata;
pub mod textio;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DenseMatrix = numkernel::Matrix<f64>;
pub type DenseMatrix32 = numkernel::Matrix<f32>;
pub type MlpModel = numkernel::Mlp<f64>;
pub type MlpModel32 = numkernel::Mlp<f32>;
