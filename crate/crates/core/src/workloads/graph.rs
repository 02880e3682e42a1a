//! Graph workloads: a dynamic adjacency-list graph with edge churn, and a
//! compact analysis kernel (R-MAT generation, CSR build, max-weight scan,
//! betweenness from sampled sources).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{SimHeap, WorkloadError};

pub(super) const SDG_SUITE_OPS: u32 = 6500;
pub(super) const SSCA2_SUITE_SCALE: u32 = 11;

const SDG_VERTICES: u64 = 512;
const VERTEX_BYTES: u64 = 16;
const EDGE_BYTES: u64 = 32;
const FIRST_BLOCK_EDGES: u64 = 4;

#[derive(Debug, Clone, Default)]
struct AdjList {
    addr: u64,
    cap: u64,
    out: Vec<u32>,
}

/// Directed graph with per-vertex edge blocks that double when full.
#[derive(Debug)]
pub(crate) struct DynGraph {
    table: u64,
    adj: Vec<AdjList>,
}

impl DynGraph {
    pub(crate) fn new(heap: &mut SimHeap, vertices: u64) -> Result<Self, WorkloadError> {
        let table = heap.alloc_array(vertices, VERTEX_BYTES)?;
        for v in 0..vertices {
            heap.write(table + v * VERTEX_BYTES);
        }
        Ok(DynGraph { table, adj: vec![AdjList::default(); vertices as usize] })
    }

    fn scan(&self, heap: &mut SimHeap, u: usize, v: u32) -> Option<usize> {
        heap.read(self.table + u as u64 * VERTEX_BYTES);
        let list = &self.adj[u];
        for (i, &w) in list.out.iter().enumerate() {
            heap.read(list.addr + i as u64 * EDGE_BYTES);
            if w == v {
                return Some(i);
            }
        }
        None
    }

    pub(crate) fn insert_edge(&mut self, heap: &mut SimHeap, u: usize, v: u32) -> Result<bool, WorkloadError> {
        if self.scan(heap, u, v).is_some() {
            return Ok(false);
        }
        let len = self.adj[u].out.len() as u64;
        if len == self.adj[u].cap {
            let cap = (self.adj[u].cap * 2).max(FIRST_BLOCK_EDGES);
            let addr = heap.alloc(cap * EDGE_BYTES, EDGE_BYTES * FIRST_BLOCK_EDGES)?;
            let old = self.adj[u].addr;
            for i in 0..len {
                heap.read(old + i * EDGE_BYTES);
                heap.write(addr + i * EDGE_BYTES);
            }
            self.adj[u].addr = addr;
            self.adj[u].cap = cap;
        }
        let list = &mut self.adj[u];
        heap.write(list.addr + len * EDGE_BYTES);
        list.out.push(v);
        heap.write(self.table + u as u64 * VERTEX_BYTES);
        Ok(true)
    }

    pub(crate) fn remove_edge(&mut self, heap: &mut SimHeap, u: usize, v: u32) -> bool {
        let Some(i) = self.scan(heap, u, v) else {
            return false;
        };
        let list = &mut self.adj[u];
        let last = list.out.len() - 1;
        heap.read(list.addr + last as u64 * EDGE_BYTES);
        heap.write(list.addr + i as u64 * EDGE_BYTES);
        list.out.swap_remove(i);
        heap.write(self.table + u as u64 * VERTEX_BYTES);
        true
    }

    #[cfg(test)]
    pub(crate) fn out_edges(&self, u: usize) -> &[u32] {
        &self.adj[u].out
    }
}

/// Edge churn: seven inserts between random endpoints, then three deletes
/// of random existing edges, repeated.
pub(super) fn sdg(heap: &mut SimHeap, rng: &mut ChaCha8Rng, ops: u32) -> Result<(), WorkloadError> {
    let mut g = DynGraph::new(heap, SDG_VERTICES)?;
    let mut edges: Vec<(usize, u32)> = Vec::new();
    for i in 0..ops {
        if edges.is_empty() || i % 10 < 7 {
            let u = rng.random_range(0..SDG_VERTICES) as usize;
            let v = rng.random_range(0..SDG_VERTICES) as u32;
            if g.insert_edge(heap, u, v)? {
                edges.push((u, v));
            }
        } else {
            let (u, v) = edges.swap_remove(rng.random_range(0..edges.len()));
            let removed = g.remove_edge(heap, u, v);
            debug_assert!(removed);
        }
    }
    Ok(())
}

const EDGE_FACTOR: u64 = 4;
const BC_SOURCES: usize = 4;
const RMAT: [f64; 3] = [0.55, 0.10, 0.10];

/// Simulated-heap arrays of the analysis kernel.
struct Arrays {
    tuples: u64,
    offsets: u64,
    targets: u64,
    weights: u64,
    dist: u64,
    sigma: u64,
    delta: u64,
    bc: u64,
    queue: u64,
}

fn rmat_vertex_pair(rng: &mut ChaCha8Rng, scale: u32) -> (u32, u32) {
    let (mut u, mut v) = (0u32, 0u32);
    for _ in 0..scale {
        let p: f64 = rng.random();
        let (du, dv) = if p < RMAT[0] {
            (0, 0)
        } else if p < RMAT[0] + RMAT[1] {
            (0, 1)
        } else if p < RMAT[0] + RMAT[1] + RMAT[2] {
            (1, 0)
        } else {
            (1, 1)
        };
        u = u << 1 | du;
        v = v << 1 | dv;
    }
    (u, v)
}

pub(super) fn ssca2(heap: &mut SimHeap, rng: &mut ChaCha8Rng, scale: u32) -> Result<(), WorkloadError> {
    if scale > 24 {
        return Err(WorkloadError::ParameterTooLarge { max: 24 });
    }
    let n = 1u64 << scale;
    let m = n * EDGE_FACTOR;
    let a = Arrays {
        tuples: heap.alloc_array(m, 12)?,
        offsets: heap.alloc_array(n + 1, 8)?,
        targets: heap.alloc_array(m, 4)?,
        weights: heap.alloc_array(m, 4)?,
        dist: heap.alloc_array(n, 4)?,
        sigma: heap.alloc_array(n, 8)?,
        delta: heap.alloc_array(n, 8)?,
        bc: heap.alloc_array(n, 8)?,
        queue: heap.alloc_array(n, 4)?,
    };

    // generation
    let mut tuples = Vec::with_capacity(m as usize);
    for i in 0..m {
        let (u, v) = rmat_vertex_pair(rng, scale);
        let w: u32 = rng.random_range(1..=1 << 16);
        heap.write(a.tuples + i * 12);
        tuples.push((u, v, w));
    }

    // CSR build: degree count, prefix sum, scatter
    let mut offsets = vec![0u64; n as usize + 1];
    for v in 0..=n {
        heap.write(a.offsets + v * 8);
    }
    for (i, &(u, _, _)) in tuples.iter().enumerate() {
        heap.read(a.tuples + i as u64 * 12);
        heap.read(a.offsets + (u as u64 + 1) * 8);
        heap.write(a.offsets + (u as u64 + 1) * 8);
        offsets[u as usize + 1] += 1;
    }
    for v in 1..=n as usize {
        heap.read(a.offsets + (v as u64 - 1) * 8);
        heap.write(a.offsets + v as u64 * 8);
        offsets[v] += offsets[v - 1];
    }
    let mut cursor = offsets.clone();
    let mut targets = vec![0u32; m as usize];
    let mut weights = vec![0u32; m as usize];
    for (i, &(u, v, w)) in tuples.iter().enumerate() {
        heap.read(a.tuples + i as u64 * 12);
        let slot = cursor[u as usize];
        cursor[u as usize] += 1;
        heap.read(a.offsets + u as u64 * 8);
        heap.write(a.targets + slot * 4);
        heap.write(a.weights + slot * 4);
        targets[slot as usize] = v;
        weights[slot as usize] = w;
    }

    // max-weight edge scan
    let mut best = 0;
    for (j, &w) in weights.iter().enumerate() {
        heap.read(a.weights + j as u64 * 4);
        best = best.max(w);
    }
    debug_assert!(best > 0);

    // betweenness from sampled sources
    let mut bc = vec![0f64; n as usize];
    for v in 0..n {
        heap.write(a.bc + v * 8);
    }
    for _ in 0..BC_SOURCES {
        let s = rng.random_range(0..n) as usize;
        let mut dist = vec![-1i64; n as usize];
        let mut sigma = vec![0f64; n as usize];
        let mut delta = vec![0f64; n as usize];
        for v in 0..n {
            heap.write(a.dist + v * 4);
            heap.write(a.sigma + v * 8);
            heap.write(a.delta + v * 8);
        }
        dist[s] = 0;
        sigma[s] = 1.0;
        let mut order = vec![s];
        heap.write(a.queue);
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            heap.read(a.queue + head as u64 * 4);
            head += 1;
            heap.read(a.offsets + u as u64 * 8);
            for j in offsets[u]..offsets[u + 1] {
                heap.read(a.targets + j * 4);
                let v = targets[j as usize] as usize;
                heap.read(a.dist + v as u64 * 4);
                if dist[v] < 0 {
                    dist[v] = dist[u] + 1;
                    heap.write(a.dist + v as u64 * 4);
                    heap.write(a.queue + order.len() as u64 * 4);
                    order.push(v);
                }
                if dist[v] == dist[u] + 1 {
                    heap.read(a.sigma + u as u64 * 8);
                    heap.write(a.sigma + v as u64 * 8);
                    sigma[v] += sigma[u];
                }
            }
        }
        for (pos, &u) in order.iter().enumerate().rev() {
            heap.read(a.queue + pos as u64 * 4);
            heap.read(a.offsets + u as u64 * 8);
            for j in offsets[u]..offsets[u + 1] {
                heap.read(a.targets + j * 4);
                let v = targets[j as usize] as usize;
                heap.read(a.dist + v as u64 * 4);
                if dist[v] == dist[u] + 1 {
                    heap.read(a.sigma + v as u64 * 8);
                    heap.read(a.delta + v as u64 * 8);
                    delta[u] += sigma[u] / sigma[v] * (1.0 + delta[v]);
                }
            }
            heap.write(a.delta + u as u64 * 8);
            if u != s {
                heap.write(a.bc + u as u64 * 8);
                bc[u] += delta[u];
            }
        }
    }
    debug_assert!(bc.iter().all(|b| b.is_finite()));
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
        fn dyn_graph_matches_edge_set(ops in prop::collection::vec((any::<bool>(), 0usize..8, 0u32..8), 1..300)) {
            let mut h = SimHeap::new(&WorkloadSpec::new(WorkloadKind::Sdg(1), 0)).unwrap();
            let mut g = DynGraph::new(&mut h, 8).unwrap();
            let mut model = BTreeSet::new();
            for (ins, u, v) in ops {
                if ins {
                    prop_assert_eq!(g.insert_edge(&mut h, u, v).unwrap(), model.insert((u, v)));
                } else {
                    prop_assert_eq!(g.remove_edge(&mut h, u, v), model.remove(&(u, v)));
                }
            }
            for u in 0..8 {
                let got: BTreeSet<u32> = g.out_edges(u).iter().copied().collect();
                let want: BTreeSet<u32> = model.iter().filter(|e| e.0 == u).map(|e| e.1).collect();
                prop_assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn rmat_pairs_are_in_range_and_skewed() {
        let mut rng = crate::workloads::rng(4);
        let pairs: Vec<_> = (0..4000).map(|_| rmat_vertex_pair(&mut rng, 8)).collect();
        assert!(pairs.iter().all(|&(u, v)| u < 256 && v < 256));
        let low = pairs.iter().filter(|&&(u, _)| u < 128).count();
        assert!(low > 2400, "top half of sources should dominate, got {low}");
    }
}
