//! Minimal feed-forward network engine: dense, convolution, max-pool, ReLU and
//! dropout layers over flat parameter vectors, with exact reverse-mode gradients.

mod activation;
mod conv;
mod network;
mod params;
mod spec;

pub use activation::{log_softmax, nll_loss, softmax};
pub use network::{backward, forward, forward_trace, ForwardMode, Trace};
pub use params::{BlockKind, ParamBlock, ParamLayout, ParamVector};
pub use spec::{cnn, fcnn, mlp, scale_cnn, scale_fcnn, Layer, NetworkSpec, MNIST_SHAPE};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("usage error: {0}")]
    Usage(String),
}
