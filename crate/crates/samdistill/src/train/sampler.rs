use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serializable position of a [`Sampler`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub seed: u64,
    pub word_pos: u128,
    pub order: Vec<usize>,
    pub cursor: usize,
    pub epoch: u64,
}

/// Epoch-wise shuffled index stream.
#[derive(Clone, Debug)]
pub struct Sampler {
    seed: u64,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl Sampler {
    pub fn new(len: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Dataset("cannot sample from an empty dataset".into()));
        }
        let mut s = Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
            cursor: 0,
            epoch: 0,
        };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Next `n` indices, reshuffling whenever an epoch is exhausted.
    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            seed: self.seed,
            word_pos: self.rng.get_word_pos(),
            order: self.order.clone(),
            cursor: self.cursor,
            epoch: self.epoch,
        }
    }

    pub fn from_state(state: &SamplerState) -> Result<Self> {
        if state.cursor > state.order.len() || state.order.is_empty() {
            return Err(Error::Checkpoint("corrupt sampler state".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
        rng.set_word_pos(state.word_pos);
        Ok(Self {
            seed: state.seed,
            rng,
            order: state.order.clone(),
            cursor: state.cursor,
            epoch: state.epoch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epochs_cover_everything() {
        let mut s = Sampler::new(10, 3).unwrap();
        let mut first: Vec<usize> = s.next_batch(10);
        first.sort();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        assert_eq!(s.next_batch(4).len(), 4);
        assert_eq!(s.epoch(), 1);
    }

    #[test]
    fn state_round_trip_continues_identically() {
        let mut a = Sampler::new(7, 9).unwrap();
        a.next_batch(12);
        let mut b = Sampler::from_state(&a.state()).unwrap();
        for _ in 0..5 {
            assert_eq!(a.next_batch(5), b.next_batch(5));
        }
    }

    #[test]
    fn empty_is_rejected() {
        assert!(Sampler::new(0, 0).is_err());
    }
}
