//! SGLD posterior sampling for neural-network classifiers with online
//! distillation of the posterior predictive distribution into a single student
//! network, plus the data manipulations and metrics of the masked-MNIST
//! robustness study.

pub mod nn;
pub mod real;
pub mod tensor;

pub use real::Real;
pub use tensor::Tensor;
pub mod data;
pub mod distill;
pub mod experiment;
pub mod metrics;
pub mod rng;
pub mod sgld;
