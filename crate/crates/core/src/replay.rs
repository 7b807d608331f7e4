//! Reservoir-sampled replay storage, one shard per actor.
//!
//! Every offered unroll draws a key uniformly from `[0, 1)`. A shard keeps the
//! `K = capacity / n` unrolls with the largest keys seen so far, so its
//! contents are a uniform random subset of everything ever offered. The
//! smallest stored key is the rising admission threshold.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::unroll::Unroll;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Keyed {
    key: f64,
    slot: usize,
}

impl Eq for Keyed {}

impl Ord for Keyed {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then(self.slot.cmp(&other.slot))
    }
}

impl PartialOrd for Keyed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct ReplayShard {
    capacity_frames: usize,
    unroll_length: usize,
    slots: Vec<Arc<Unroll>>,
    keys: BinaryHeap<Reverse<Keyed>>,
    offered: u64,
    evicted: u64,
}

impl ReplayShard {
    pub fn new(capacity_frames: usize, unroll_length: usize) -> Result<Self> {
        if unroll_length == 0 {
            return Err(config_err("unroll length must be >= 1"));
        }
        let k = capacity_frames / unroll_length;
        Ok(Self {
            capacity_frames,
            unroll_length,
            slots: Vec::with_capacity(k),
            keys: BinaryHeap::with_capacity(k),
            offered: 0,
            evicted: 0,
        })
    }

    /// Splits a global frame capacity evenly across `shards`; the remainder
    /// goes to the first shards.
    pub fn split(total_capacity_frames: usize, shards: usize, unroll_length: usize) -> Result<Vec<Self>> {
        if shards == 0 {
            return Err(config_err("need at least one shard"));
        }
        let base = total_capacity_frames / shards;
        let extra = total_capacity_frames % shards;
        (0..shards)
            .map(|i| Self::new(base + usize::from(i < extra), unroll_length))
            .collect()
    }

    pub fn capacity_frames(&self) -> usize {
        self.capacity_frames
    }

    /// Maximum number of whole unrolls the shard can hold.
    pub fn capacity_unrolls(&self) -> usize {
        self.capacity_frames / self.unroll_length
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn frames_stored(&self) -> usize {
        self.slots.len() * self.unroll_length
    }

    pub fn frames_offered(&self) -> u64 {
        self.offered * self.unroll_length as u64
    }

    pub fn unrolls_offered(&self) -> u64 {
        self.offered
    }

    pub fn evictions(&self) -> u64 {
        self.evicted
    }

    /// Smallest stored key once the shard is full, zero before that.
    pub fn threshold(&self) -> f64 {
        if self.slots.len() < self.capacity_unrolls() {
            0.0
        } else {
            self.keys.peek().map_or(0.0, |k| k.0.key)
        }
    }

    pub fn stored(&self) -> impl Iterator<Item = &Arc<Unroll>> {
        self.slots.iter()
    }

    /// Offers a whole unroll under a fresh uniform key; returns whether it was stored.
    pub fn offer<R: Rng + ?Sized>(&mut self, unroll: Unroll, rng: &mut R) -> Result<bool> {
        self.offer_keyed(unroll, rng.random())
    }

    /// Offers a whole unroll under a caller-chosen key in `[0, 1)`.
    pub fn offer_keyed(&mut self, mut unroll: Unroll, key: f64) -> Result<bool> {
        if !(0.0..1.0).contains(&key) {
            return Err(config_err(format!("reservoir key {key} outside [0, 1)")));
        }
        if unroll.len() != self.unroll_length {
            return Err(config_err(format!(
                "unroll of length {} offered to a shard of length {}",
                unroll.len(),
                self.unroll_length
            )));
        }
        unroll.meta.reservoir_key = key;
        self.offered += 1;
        let k = self.capacity_unrolls();
        if k == 0 {
            return Ok(false);
        }
        if self.slots.len() < k {
            let slot = self.slots.len();
            self.slots.push(Arc::new(unroll));
            self.keys.push(Reverse(Keyed { key, slot }));
            return Ok(true);
        }
        let min = self.keys.peek().expect("full shard has keys").0;
        if key <= min.key {
            return Ok(false);
        }
        self.keys.pop();
        self.slots[min.slot] = Arc::new(unroll);
        self.keys.push(Reverse(Keyed { key, slot: min.slot }));
        self.evicted += 1;
        Ok(true)
    }

    /// Uniform draw, with replacement, among the stored unrolls.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Arc<Unroll>> {
        if self.slots.is_empty() {
            return Err(Error::NotReady);
        }
        let i = rng.random_range(0..self.slots.len());
        Ok(Arc::clone(&self.slots[i]))
    }
}
