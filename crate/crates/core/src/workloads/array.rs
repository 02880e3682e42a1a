use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{SimHeap, WorkloadError};
use crate::paging::PAGE_SIZE;

pub(super) const SPS_SUITE_OPS: u32 = 400;
const SPS_ENTRY_BYTES: u64 = 64;
const SPS_ENTRIES: u64 = 50 * PAGE_SIZE / SPS_ENTRY_BYTES;

/// Writes one word on each of `n` pages, then revisits them all in a
/// shuffled order.
pub(super) fn ntimes(heap: &mut SimHeap, rng: &mut ChaCha8Rng, n: u32) -> Result<(), WorkloadError> {
    let base = heap.alloc_array(n as u64, PAGE_SIZE)?;
    for i in 0..n as u64 {
        heap.write(base + i * PAGE_SIZE);
    }
    let mut order: Vec<u64> = (0..n as u64).collect();
    order.shuffle(rng);
    for i in order {
        heap.read(base + i * PAGE_SIZE + 8 * rng.random_range(0..PAGE_SIZE / 8));
    }
    Ok(())
}

/// Random swaps between entries of a fixed array.
pub(super) fn sps(heap: &mut SimHeap, rng: &mut ChaCha8Rng, ops: u32) -> Result<(), WorkloadError> {
    let base = heap.alloc_array(SPS_ENTRIES, SPS_ENTRY_BYTES)?;
    let mut values: Vec<u64> = (0..SPS_ENTRIES).collect();
    for _ in 0..ops {
        let i = rng.random_range(0..SPS_ENTRIES);
        let j = rng.random_range(0..SPS_ENTRIES);
        heap.read(base + i * SPS_ENTRY_BYTES);
        heap.read(base + j * SPS_ENTRY_BYTES);
        values.swap(i as usize, j as usize);
        heap.write(base + i * SPS_ENTRY_BYTES);
        heap.write(base + j * SPS_ENTRY_BYTES);
    }
    debug_assert_eq!(values.iter().sum::<u64>(), SPS_ENTRIES * (SPS_ENTRIES - 1) / 2);
    Ok(())
}
