use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::Dataset;
use super::DataError;
use crate::real::Real;
use crate::tensor::Tensor;

/// Mean of class `c` at distance `separation` from the origin.
///
/// Directions are evenly spaced on the circle spanned by the first two axes;
/// one-dimensional blobs sit on a line with unit spacing scaled by `separation`.
pub fn blob_center(class: usize, classes: usize, dims: usize, separation: f64) -> Vec<f64> {
    let mut center = vec![0.0; dims];
    if dims == 1 {
        center[0] = separation * (class as f64 - (classes as f64 - 1.0) / 2.0);
    } else {
        let angle = TAU * class as f64 / classes as f64;
        center[0] = separation * angle.cos();
        center[1] = separation * angle.sin();
    }
    center
}

/// Isotropic unit-variance Gaussian blobs, shuffled, deterministic per seed.
pub fn synthetic_blobs<T: Real>(
    classes: usize,
    dims: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset<T>, DataError> {
    if !(2..=256).contains(&classes) {
        return Err(DataError::Invalid(format!("need 2..=256 classes, got {classes}")));
    }
    if dims == 0 || n_per_class == 0 {
        return Err(DataError::Invalid("blobs need at least one dimension and one example per class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples: Vec<(Vec<f64>, u8)> = Vec::with_capacity(classes * n_per_class);
    for class in 0..classes {
        let center = blob_center(class, classes, dims, separation);
        for _ in 0..n_per_class {
            let x = center
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + z
                })
                .collect::<Vec<f64>>();
            examples.push((x, class as u8));
        }
    }
    examples.shuffle(&mut rng);
    let data = examples.iter().flat_map(|(x, _)| x.iter().map(|&v| T::from_f64_lossy(v))).collect();
    let labels = examples.iter().map(|&(_, y)| y).collect();
    let inputs = Tensor::new(vec![classes * n_per_class, dims], data)?;
    Dataset::labeled(inputs, labels, "blobs")
}
