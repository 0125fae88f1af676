//! Square occlusion masks on 28×28 images.

use rand::Rng;

use super::DataError;
use crate::real::Real;

pub const IMAGE_SIDE: usize = 28;
const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Mask side `m` plus the seed that placed every mask of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    pub side: usize,
    pub seed: u64,
}

impl MaskSpec {
    pub fn new(side: usize, seed: u64) -> Result<Self, DataError> {
        if side > IMAGE_SIDE {
            return Err(DataError::Invalid(format!("mask side {side} exceeds image side {IMAGE_SIDE}")));
        }
        Ok(Self { side, seed })
    }

    pub fn rate(&self) -> f64 {
        masking_rate(self.side)
    }
}

/// Fraction of pixels an m×m mask covers: m²/784.
pub fn masking_rate(side: usize) -> f64 {
    (side * side) as f64 / IMAGE_PIXELS as f64
}

/// Zeroes the m×m block whose top-left pixel is `corner` (row, col), in place.
pub fn apply_mask_in_place<T: Real>(image: &mut [T], side: usize, corner: (usize, usize)) -> Result<(), DataError> {
    if image.len() != IMAGE_PIXELS {
        return Err(DataError::Invalid(format!("expected a 28x28 image, got {} pixels", image.len())));
    }
    let (row, col) = corner;
    if side > IMAGE_SIDE || row + side > IMAGE_SIDE || col + side > IMAGE_SIDE {
        return Err(DataError::Invalid(format!("mask of side {side} at {corner:?} leaves the image")));
    }
    for r in row..row + side {
        image[r * IMAGE_SIDE + col..r * IMAGE_SIDE + col + side].fill(T::zero());
    }
    Ok(())
}

pub fn apply_mask<T: Real>(image: &[T], side: usize, corner: (usize, usize)) -> Result<Vec<T>, DataError> {
    let mut out = image.to_vec();
    apply_mask_in_place(&mut out, side, corner)?;
    Ok(out)
}

/// Uniform top-left corner among placements that keep the mask inside the image.
pub fn sample_mask_corner<R: Rng + ?Sized>(side: usize, rng: &mut R) -> (usize, usize) {
    let span = IMAGE_SIDE - side.min(IMAGE_SIDE) + 1;
    (rng.gen_range(0..span), rng.gen_range(0..span))
}
