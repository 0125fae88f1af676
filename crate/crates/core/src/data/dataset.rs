use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batches::BatchSampler;
use super::idx::{encode_idx_images, encode_idx_labels, write_maybe_gz};
use super::mask::{apply_mask_in_place, sample_mask_corner, MaskSpec, IMAGE_SIDE};
use super::DataError;
use crate::real::Real;
use crate::tensor::Tensor;

/// How a dataset was derived from its source split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub source: String,
    /// (N, seed) of the labeled subsample, if any.
    pub subsample: Option<(usize, u64)>,
    pub mask: Option<MaskSpec>,
    /// Top-left (row, col) of each image's mask, in dataset order.
    pub corners: Vec<(u8, u8)>,
}

impl Provenance {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "source = {}", self.source).unwrap();
        if let Some((n, seed)) = self.subsample {
            writeln!(out, "subsample_n = {n}\nsubsample_seed = {seed}").unwrap();
        }
        if let Some(mask) = self.mask {
            writeln!(out, "mask_side = {}\nmask_seed = {}\nmask_rate = {}", mask.side, mask.seed, mask.rate()).unwrap();
            writeln!(out, "corners:").unwrap();
            for (r, c) in &self.corners {
                writeln!(out, "{r} {c}").unwrap();
            }
        }
        out
    }
}

/// Images (or feature vectors) with optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    inputs: Tensor<T>,
    labels: Option<Vec<u8>>,
    provenance: Provenance,
}

/// A dataset after subsampling and masking.
pub type MaskedDataset<T> = Dataset<T>;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch<T> {
    pub inputs: Tensor<T>,
    pub labels: Vec<u8>,
}

impl<T: Real> Dataset<T> {
    pub fn labeled(inputs: Tensor<T>, labels: Vec<u8>, source: &str) -> Result<Self, DataError> {
        if inputs.batch_size() != labels.len() {
            return Err(DataError::CountMismatch { images: inputs.batch_size(), labels: labels.len() });
        }
        Ok(Self {
            inputs,
            labels: Some(labels),
            provenance: Provenance { source: source.into(), ..Default::default() },
        })
    }

    pub fn unlabeled(inputs: Tensor<T>, source: &str) -> Self {
        Self { inputs, labels: None, provenance: Provenance { source: source.into(), ..Default::default() } }
    }

    pub fn len(&self) -> usize {
        self.inputs.batch_size()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Tensor<T> {
        &self.inputs
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// First `n` examples (or all of them if fewer).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let mut out = self.clone();
        out.inputs = self.inputs.slice_batch(0, n);
        out.labels = self.labels.as_ref().map(|l| l[..n].to_vec());
        out.provenance.corners.truncate(n);
        out
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = self.clone();
        out.inputs = self.inputs.gather(indices);
        out.labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        if !self.provenance.corners.is_empty() {
            out.provenance.corners = indices.iter().map(|&i| self.provenance.corners[i]).collect();
        }
        out
    }

    /// The same images without labels, for distillation.
    pub fn to_pool(&self) -> UnlabeledPool<T> {
        UnlabeledPool { inputs: self.inputs.clone() }
    }

    pub fn batch(&self, indices: &[usize]) -> LabeledBatch<T> {
        let labels = self.labels.as_ref().expect("batch() needs a labeled dataset");
        LabeledBatch { inputs: self.inputs.gather(indices), labels: indices.iter().map(|&i| labels[i]).collect() }
    }

    /// Endless stream of seeded, reshuffled-per-pass minibatches of exactly `batch_size`.
    pub fn minibatches(&self, batch_size: usize, seed: u64) -> Result<BatchIter<'_, T>, DataError> {
        if self.labels.is_none() {
            return Err(DataError::Invalid("minibatches need labels; use an unlabeled pool".into()));
        }
        let sampler = BatchSampler::new(self.len(), batch_size, ChaCha8Rng::seed_from_u64(seed))?;
        Ok(BatchIter { data: self, sampler })
    }

    /// Writes `<stem>-images-idx3-ubyte.gz`, the labels file when present, and a provenance sidecar.
    pub fn dump(&self, dir: &Path, stem: &str) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(|e| DataError::Io(format!("{}: {e}", dir.display())))?;
        write_maybe_gz(&dir.join(format!("{stem}-images-idx3-ubyte.gz")), &encode_idx_images(&self.inputs))?;
        if let Some(labels) = &self.labels {
            write_maybe_gz(&dir.join(format!("{stem}-labels-idx1-ubyte.gz")), &encode_idx_labels(labels))?;
        }
        let sidecar = dir.join(format!("{stem}-provenance.txt"));
        std::fs::write(&sidecar, self.provenance.to_text())
            .map_err(|e| DataError::Io(format!("{}: {e}", sidecar.display())))
    }
}

/// Seeded sample of `n` examples without replacement.
pub fn subsample_labeled<T: Real>(data: &Dataset<T>, n: usize, seed: u64) -> Result<Dataset<T>, DataError> {
    if n > data.len() {
        return Err(DataError::Invalid(format!("cannot subsample {n} examples from {}", data.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, data.len(), n).into_vec();
    let mut out = data.select(&picked);
    out.provenance.subsample = Some((n, seed));
    Ok(out)
}

/// Places one uniformly positioned m×m mask on every 28×28 image.
pub fn mask_dataset<T: Real>(data: &Dataset<T>, spec: MaskSpec) -> Result<Dataset<T>, DataError> {
    let shape = data.inputs.shape();
    if shape[1..] != [1, IMAGE_SIDE, IMAGE_SIDE] {
        if spec.side == 0 {
            let mut out = data.clone();
            out.provenance.mask = Some(spec);
            return Ok(out);
        }
        return Err(DataError::Invalid(format!("masks need 1x28x28 images, dataset has shape {shape:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = data.clone();
    let mut corners = Vec::with_capacity(data.len());
    let width = out.inputs.row_len();
    for image in out.inputs.data_mut().chunks_exact_mut(width) {
        let corner = sample_mask_corner(spec.side, &mut rng);
        apply_mask_in_place(image, spec.side, corner)?;
        corners.push((corner.0 as u8, corner.1 as u8));
    }
    out.provenance.mask = Some(spec);
    out.provenance.corners = corners;
    Ok(out)
}

pub struct BatchIter<'a, T> {
    data: &'a Dataset<T>,
    sampler: BatchSampler,
}

impl<T> BatchIter<'_, T> {
    pub fn sampler(&self) -> &BatchSampler {
        &self.sampler
    }
}

impl<T: Real> Iterator for BatchIter<'_, T> {
    type Item = LabeledBatch<T>;

    fn next(&mut self) -> Option<Self::Item> {
        let idx = self.sampler.next_indices();
        Some(self.data.batch(&idx))
    }
}

/// Inputs without labels; the only data type the distiller accepts.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledPool<T> {
    inputs: Tensor<T>,
}

impl<T: Real> UnlabeledPool<T> {
    pub fn new(inputs: Tensor<T>) -> Self {
        Self { inputs }
    }

    pub fn len(&self) -> usize {
        self.inputs.batch_size()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Tensor<T> {
        &self.inputs
    }

    pub fn batch(&self, indices: &[usize]) -> Tensor<T> {
        self.inputs.gather(indices)
    }
}
