use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::midlevel::Observation;

#[derive(Debug, Clone)]
pub struct Transition {
    pub s: Arc<Observation>,
    pub a: usize,
    pub r: f64,
    pub s_next: Arc<Observation>,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling, without replacement
/// within a batch.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Indices of a uniform batch, or `None` while fewer than `batch`
    /// transitions are stored.
    pub fn sample_indices<R: Rng>(&self, batch: usize, rng: &mut R) -> Option<Vec<usize>> {
        (batch > 0 && self.items.len() >= batch).then(|| index::sample(rng, self.items.len(), batch).into_vec())
    }

    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        self.sample_indices(batch, rng)
            .map(|ix| ix.into_iter().map(|i| &self.items[i]).collect())
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }
}
