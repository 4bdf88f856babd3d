//! Virtual clock, event queue, and seeded latency draws.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::LatencyModel;

struct Scheduled<E> {
    time: u64,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Events fire in `(time, insertion order)` order.
pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    next_seq: u64,
    now: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Schedule at an absolute time; times in the past fire now.
    pub fn at(&mut self, time: u64, event: E) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled {
            time: time.max(self.now),
            seq,
            event,
        });
    }

    pub fn pop(&mut self) -> Option<(u64, E)> {
        let s = self.heap.pop()?;
        self.now = s.time;
        Some((s.time, s.event))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Latency draws keyed by `(purpose, key, node)` so a draw does not depend on
/// the order in which other draws happen. Runs that differ only in cache mode
/// therefore see identical network delays.
#[derive(Debug, Clone, Copy)]
pub struct Sampler {
    seed: u64,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler { seed }
    }

    fn rng(&self, purpose: &str, key: u64, node: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(purpose.as_bytes());
        h.update([0]);
        h.update(key.to_le_bytes());
        h.update(node.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    pub fn latency(&self, model: LatencyModel, purpose: &str, key: u64, node: u64) -> u64 {
        match model {
            LatencyModel::Fixed { ms } => ms,
            LatencyModel::Uniform { min_ms, max_ms } => {
                self.rng(purpose, key, node).random_range(min_ms..=max_ms)
            }
        }
    }

    /// Uniform integer in `[0, bound)`; 0 when `bound` is 0.
    pub fn below(&self, purpose: &str, key: u64, bound: u64) -> u64 {
        if bound == 0 {
            0
        } else {
            self.rng(purpose, key, 0).random_range(0..bound)
        }
    }

    pub fn bytes32(&self, purpose: &str, key: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(purpose.as_bytes());
        h.update([0]);
        h.update(key.to_le_bytes());
        h.finalize().into()
    }
}
