//! Separately chained hash table with a fixed bucket array.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{SimHeap, WorkloadError};

pub(super) const SUITE_OPS: u32 = 3700;
const BUCKETS: u64 = 1024;
const BUCKET_BYTES: u64 = 8;
const ENTRY_BYTES: u64 = 256;
const KEY_SPACE: u64 = 1 << 20;

#[derive(Debug, Clone)]
struct Entry {
    key: u64,
    next: Option<usize>,
    addr: u64,
}

#[derive(Debug)]
pub(crate) struct HashTable {
    buckets_addr: u64,
    heads: Vec<Option<usize>>,
    entries: Vec<Entry>,
    free: Vec<usize>,
}

fn bucket_of(key: u64) -> usize {
    (key.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 54) as usize % BUCKETS as usize
}

impl HashTable {
    pub(crate) fn new(heap: &mut SimHeap) -> Result<Self, WorkloadError> {
        let buckets_addr = heap.alloc_array(BUCKETS, BUCKET_BYTES)?;
        Ok(HashTable { buckets_addr, heads: vec![None; BUCKETS as usize], entries: Vec::new(), free: Vec::new() })
    }

    fn bucket_addr(&self, b: usize) -> u64 {
        self.buckets_addr + b as u64 * BUCKET_BYTES
    }

    /// Walks the chain; returns (predecessor, entry) of the match.
    fn find(&self, heap: &mut SimHeap, key: u64) -> (usize, Option<(Option<usize>, usize)>) {
        let b = bucket_of(key);
        heap.read(self.bucket_addr(b));
        let mut prev = None;
        let mut cur = self.heads[b];
        while let Some(e) = cur {
            heap.read(self.entries[e].addr);
            if self.entries[e].key == key {
                return (b, Some((prev, e)));
            }
            prev = Some(e);
            cur = self.entries[e].next;
        }
        (b, None)
    }

    pub(crate) fn insert(&mut self, heap: &mut SimHeap, key: u64) -> Result<bool, WorkloadError> {
        let (b, found) = self.find(heap, key);
        if found.is_some() {
            return Ok(false);
        }
        let next = self.heads[b];
        let id = match self.free.pop() {
            Some(id) => {
                self.entries[id].key = key;
                self.entries[id].next = next;
                id
            }
            None => {
                let addr = heap.alloc(ENTRY_BYTES, ENTRY_BYTES)?;
                self.entries.push(Entry { key, next, addr });
                self.entries.len() - 1
            }
        };
        heap.write(self.entries[id].addr);
        self.heads[b] = Some(id);
        heap.write(self.bucket_addr(b));
        Ok(true)
    }

    pub(crate) fn remove(&mut self, heap: &mut SimHeap, key: u64) -> bool {
        let (b, found) = self.find(heap, key);
        let Some((prev, e)) = found else {
            return false;
        };
        let next = self.entries[e].next;
        match prev {
            Some(p) => {
                self.entries[p].next = next;
                heap.write(self.entries[p].addr);
            }
            None => {
                self.heads[b] = next;
                heap.write(self.bucket_addr(b));
            }
        }
        self.free.push(e);
        true
    }

    pub(crate) fn contains(&self, heap: &mut SimHeap, key: u64) -> bool {
        self.find(heap, key).1.is_some()
    }
}

/// Inserts, lookups and deletes in a fixed 5:2:3 rotation over random keys.
pub(super) fn run(heap: &mut SimHeap, rng: &mut ChaCha8Rng, ops: u32) -> Result<(), WorkloadError> {
    let mut table = HashTable::new(heap)?;
    let mut live: Vec<u64> = Vec::new();
    for i in 0..ops {
        let roll = i % 10;
        if live.is_empty() || roll < 5 {
            let key = rng.random_range(0..KEY_SPACE);
            if table.insert(heap, key)? {
                live.push(key);
            }
        } else if roll < 7 {
            let key = live[rng.random_range(0..live.len())];
            table.contains(heap, key);
        } else {
            let victim = live.swap_remove(rng.random_range(0..live.len()));
            table.remove(heap, victim);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::{WorkloadKind, WorkloadSpec};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    proptest! {
        #[test]
        fn matches_set(ops in prop::collection::vec((0u8..3, 0u64..300), 1..400)) {
            let mut h = SimHeap::new(&WorkloadSpec::new(WorkloadKind::Hash(1), 0)).unwrap();
            let mut t = HashTable::new(&mut h).unwrap();
            let mut model = BTreeSet::new();
            for (op, k) in ops {
                match op {
                    0 => prop_assert_eq!(t.insert(&mut h, k).unwrap(), model.insert(k)),
                    1 => prop_assert_eq!(t.remove(&mut h, k), model.remove(&k)),
                    _ => prop_assert_eq!(t.contains(&mut h, k), model.contains(&k)),
                }
            }
        }
    }
}
