//! MNIST ingestion, occlusion masks, labeled subsampling, minibatching and
//! synthetic blob datasets.

mod batches;
mod dataset;
mod idx;
mod mask;
mod synthetic;

pub use batches::{BatchSampler, SamplerState};
pub use dataset::{
    mask_dataset, subsample_labeled, BatchIter, Dataset, LabeledBatch, MaskedDataset, Provenance, UnlabeledPool,
};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_mnist_split, parse_idx, parse_idx_images, parse_idx_labels,
    read_maybe_gz, write_maybe_gz, Split, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use mask::{apply_mask, apply_mask_in_place, masking_rate, sample_mask_corner, MaskSpec, IMAGE_SIDE};
pub use synthetic::{blob_center, synthetic_blobs};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("bad IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX payload: {0}")]
    Truncated(String),
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid data request: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Shape(#[from] crate::nn::NnError),
}
