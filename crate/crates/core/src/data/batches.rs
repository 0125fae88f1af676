use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::DataError;
use crate::rng::RngState;

/// Index sampler: a fresh seeded permutation each pass, fixed-size batches,
/// the short remainder of every pass dropped.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    len: usize,
    batch_size: usize,
    order: Vec<u32>,
    cursor: usize,
    rng: ChaCha8Rng,
}

/// Checkpointable position of a [`BatchSampler`].
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SamplerState {
    pub order: Vec<u32>,
    pub cursor: usize,
    pub rng: RngState,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize, rng: ChaCha8Rng) -> Result<Self, DataError> {
        if batch_size == 0 || batch_size > len {
            return Err(DataError::Invalid(format!("batch size {batch_size} must be in 1..={len}")));
        }
        // cursor == len forces a shuffle before the first batch
        Ok(Self { len, batch_size, order: (0..len as u32).collect(), cursor: len, rng })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor + self.batch_size > self.len {
            for (i, slot) in self.order.iter_mut().enumerate() {
                *slot = i as u32;
            }
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch_size].iter().map(|&i| i as usize).collect();
        self.cursor += self.batch_size;
        out
    }

    pub fn state(&self) -> SamplerState {
        SamplerState { order: self.order.clone(), cursor: self.cursor, rng: RngState::capture(&self.rng) }
    }

    pub fn restore(len: usize, batch_size: usize, state: &SamplerState) -> Result<Self, DataError> {
        if state.order.len() != len || state.cursor > len {
            return Err(DataError::Invalid("sampler state does not match the dataset size".into()));
        }
        let mut s = Self::new(len, batch_size, state.rng.restore())?;
        s.order = state.order.clone();
        s.cursor = state.cursor;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn restore_continues_the_same_sequence() {
        let mut a = BatchSampler::new(17, 4, ChaCha8Rng::seed_from_u64(2)).unwrap();
        for _ in 0..5 {
            a.next_indices();
        }
        let mut b = BatchSampler::restore(17, 4, &a.state()).unwrap();
        for _ in 0..20 {
            assert_eq!(a.next_indices(), b.next_indices());
        }
    }

    #[test]
    fn rejects_oversized_batches() {
        assert!(BatchSampler::new(3, 4, ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(BatchSampler::new(3, 0, ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
