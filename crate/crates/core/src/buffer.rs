//! Replay and demonstration storage.

use std::collections::VecDeque;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: DVector<f64>,
    pub a: DVector<f64>,
    pub r: f64,
    pub s_next: DVector<f64>,
    /// Action taken from `s_next`; absent on the last step of an episode.
    pub a_next: Option<DVector<f64>>,
    pub episode: usize,
    pub step: usize,
    /// Discounted return-to-go within the episode, filled in when the
    /// episode closes.
    pub ret: f64,
}

impl Transition {
    pub fn new(s: DVector<f64>, a: DVector<f64>, r: f64, s_next: DVector<f64>) -> Self {
        Transition {
            s,
            a,
            r,
            s_next,
            a_next: None,
            episode: 0,
            step: 0,
            ret: 0.0,
        }
    }
}

/// Links `a_next` across consecutive steps and fills discounted returns.
pub fn finish_episode(steps: &mut [Transition], gamma: f64) {
    for i in 0..steps.len().saturating_sub(1) {
        steps[i].a_next = Some(steps[i + 1].a.clone());
    }
    let mut acc = 0.0;
    for t in steps.iter_mut().rev() {
        acc = t.r + gamma * acc;
        t.ret = acc;
    }
}

/// FIFO buffer with uniform sampling with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn extend<I: IntoIterator<Item = Transition>>(&mut self, it: I) {
        for t in it {
            self.push(t);
        }
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBatch("buffer sample"));
        }
        let len = self.items.len();
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }

    pub fn to_vec(&self) -> Vec<Transition> {
        self.items.iter().cloned().collect()
    }
}
