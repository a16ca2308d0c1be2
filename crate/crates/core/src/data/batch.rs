use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tags};

/// Resumable position of a [`BatchIterator`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchState {
    pub epochs: Vec<u64>,
    pub positions: Vec<usize>,
}

/// One batch of dataset indices per domain, in domain order.
pub type StepBatches = Vec<Vec<usize>>;

/// Seeded per-domain shuffling with independent wraparound.
///
/// Each domain walks its own permutation; when fewer than `batch_size`
/// indices remain the domain starts a new epoch with a fresh permutation
/// derived from `(seed, domain, epoch)`. Domains of different sizes
/// therefore wrap at different steps.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    sizes: Vec<usize>,
    batch_size: usize,
    seed: u64,
    state: BatchState,
    perms: Vec<Vec<usize>>,
}

impl BatchIterator {
    pub fn new(sizes: &[usize], batch_size: usize, seed: u64) -> Result<Self> {
        let smallest = sizes.iter().copied().min().unwrap_or(0);
        if batch_size == 0 || batch_size > smallest {
            return Err(Error::Config(alloc::format!(
                "batch_size {batch_size} must be in 1..={smallest} (smallest domain)"
            )));
        }
        let state = BatchState {
            epochs: alloc::vec![0; sizes.len()],
            positions: alloc::vec![0; sizes.len()],
        };
        Self::restore(sizes, batch_size, seed, state)
    }

    pub fn restore(sizes: &[usize], batch_size: usize, seed: u64, state: BatchState) -> Result<Self> {
        if state.epochs.len() != sizes.len() || state.positions.len() != sizes.len() {
            return Err(Error::Config("batch state does not match domain count".into()));
        }
        let perms = sizes
            .iter()
            .enumerate()
            .map(|(d, &n)| permutation(seed, d, state.epochs[d], n))
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            batch_size,
            seed,
            state,
            perms,
        })
    }

    pub fn state(&self) -> &BatchState {
        &self.state
    }

    pub fn epochs(&self) -> &[u64] {
        &self.state.epochs
    }

    pub fn next_step(&mut self) -> StepBatches {
        (0..self.sizes.len()).map(|d| self.next_for(d)).collect()
    }

    fn next_for(&mut self, d: usize) -> Vec<usize> {
        if self.state.positions[d] + self.batch_size > self.sizes[d] {
            self.state.epochs[d] += 1;
            self.state.positions[d] = 0;
            self.perms[d] = permutation(self.seed, d, self.state.epochs[d], self.sizes[d]);
        }
        let p = self.state.positions[d];
        self.state.positions[d] += self.batch_size;
        self.perms[d][p..p + self.batch_size].to_vec()
    }
}

fn permutation(seed: u64, domain: usize, epoch: u64, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, &[tags::BATCH, domain as u64, epoch]);
    idx.shuffle(&mut r);
    idx
}
