//! B-tree of minimum degree `T` with insertion by pre-emptive splitting and
//! single-pass deletion.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{SimHeap, WorkloadError};

pub(super) const SUITE_OPS: u32 = 5200;
const T: usize = 4;
const NODE_BYTES: u64 = 512;
const KEY_SPACE: u64 = 1 << 20;

#[derive(Debug, Clone)]
struct Node {
    keys: Vec<u64>,
    kids: Vec<usize>,
    addr: u64,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.kids.is_empty()
    }
}

/// B-tree whose nodes live at simulated heap addresses.
#[derive(Debug)]
pub(crate) struct BTree {
    nodes: Vec<Node>,
    free: Vec<usize>,
    root: usize,
}

impl BTree {
    pub(crate) fn new(heap: &mut SimHeap) -> Result<Self, WorkloadError> {
        let addr = heap.alloc(NODE_BYTES, NODE_BYTES)?;
        heap.write(addr);
        Ok(BTree { nodes: vec![Node { keys: Vec::new(), kids: Vec::new(), addr }], free: Vec::new(), root: 0 })
    }

    fn new_node(&mut self, heap: &mut SimHeap) -> Result<usize, WorkloadError> {
        if let Some(id) = self.free.pop() {
            self.nodes[id].keys.clear();
            self.nodes[id].kids.clear();
            return Ok(id);
        }
        let addr = heap.alloc(NODE_BYTES, NODE_BYTES)?;
        self.nodes.push(Node { keys: Vec::new(), kids: Vec::new(), addr });
        Ok(self.nodes.len() - 1)
    }

    fn rd(&self, heap: &mut SimHeap, id: usize) {
        heap.read(self.nodes[id].addr);
    }

    fn wr(&self, heap: &mut SimHeap, id: usize) {
        heap.write(self.nodes[id].addr);
    }

    pub(crate) fn contains(&self, heap: &mut SimHeap, key: u64) -> bool {
        let mut x = self.root;
        loop {
            self.rd(heap, x);
            let node = &self.nodes[x];
            let i = node.keys.partition_point(|&k| k < key);
            if i < node.keys.len() && node.keys[i] == key {
                return true;
            }
            if node.is_leaf() {
                return false;
            }
            x = node.kids[i];
        }
    }

    /// Returns false if the key was already present.
    pub(crate) fn insert(&mut self, heap: &mut SimHeap, key: u64) -> Result<bool, WorkloadError> {
        if self.contains(heap, key) {
            return Ok(false);
        }
        if self.nodes[self.root].keys.len() == 2 * T - 1 {
            let s = self.new_node(heap)?;
            self.nodes[s].kids.push(self.root);
            self.root = s;
            self.split_child(heap, s, 0)?;
        }
        let mut x = self.root;
        loop {
            self.rd(heap, x);
            let mut i = self.nodes[x].keys.partition_point(|&k| k < key);
            if self.nodes[x].is_leaf() {
                self.nodes[x].keys.insert(i, key);
                self.wr(heap, x);
                return Ok(true);
            }
            let child = self.nodes[x].kids[i];
            self.rd(heap, child);
            if self.nodes[child].keys.len() == 2 * T - 1 {
                self.split_child(heap, x, i)?;
                if key > self.nodes[x].keys[i] {
                    i += 1;
                }
            }
            x = self.nodes[x].kids[i];
        }
    }

    fn split_child(&mut self, heap: &mut SimHeap, x: usize, i: usize) -> Result<(), WorkloadError> {
        let y = self.nodes[x].kids[i];
        let z = self.new_node(heap)?;
        let upper_keys = self.nodes[y].keys.split_off(T);
        let median = self.nodes[y].keys.pop().expect("full node");
        let upper_kids = if self.nodes[y].is_leaf() { Vec::new() } else { self.nodes[y].kids.split_off(T) };
        self.nodes[z].keys = upper_keys;
        self.nodes[z].kids = upper_kids;
        self.nodes[x].keys.insert(i, median);
        self.nodes[x].kids.insert(i + 1, z);
        self.wr(heap, y);
        self.wr(heap, z);
        self.wr(heap, x);
        Ok(())
    }

    /// Returns false if the key was absent.
    pub(crate) fn remove(&mut self, heap: &mut SimHeap, key: u64) -> bool {
        if !self.contains(heap, key) {
            return false;
        }
        self.delete_from(heap, self.root, key);
        let r = self.root;
        if self.nodes[r].keys.is_empty() && !self.nodes[r].is_leaf() {
            self.root = self.nodes[r].kids[0];
            self.free.push(r);
        }
        true
    }

    fn delete_from(&mut self, heap: &mut SimHeap, x: usize, key: u64) {
        self.rd(heap, x);
        let i = self.nodes[x].keys.partition_point(|&k| k < key);
        let here = i < self.nodes[x].keys.len() && self.nodes[x].keys[i] == key;
        if here {
            if self.nodes[x].is_leaf() {
                self.nodes[x].keys.remove(i);
                self.wr(heap, x);
                return;
            }
            let (y, z) = (self.nodes[x].kids[i], self.nodes[x].kids[i + 1]);
            self.rd(heap, y);
            if self.nodes[y].keys.len() >= T {
                let pred = self.extreme(heap, y, true);
                self.nodes[x].keys[i] = pred;
                self.wr(heap, x);
                self.delete_from(heap, y, pred);
                return;
            }
            self.rd(heap, z);
            if self.nodes[z].keys.len() >= T {
                let succ = self.extreme(heap, z, false);
                self.nodes[x].keys[i] = succ;
                self.wr(heap, x);
                self.delete_from(heap, z, succ);
                return;
            }
            self.merge(heap, x, i);
            self.delete_from(heap, y, key);
            return;
        }
        if self.nodes[x].is_leaf() {
            return;
        }
        let mut i = i;
        let child = self.nodes[x].kids[i];
        self.rd(heap, child);
        if self.nodes[child].keys.len() < T {
            let nkeys = self.nodes[x].keys.len();
            let left = (i > 0).then(|| self.nodes[x].kids[i - 1]);
            let right = (i < nkeys).then(|| self.nodes[x].kids[i + 1]);
            if let Some(l) = left.filter(|&l| {
                self.rd(heap, l);
                self.nodes[l].keys.len() >= T
            }) {
                let sep = self.nodes[x].keys[i - 1];
                self.nodes[child].keys.insert(0, sep);
                self.nodes[x].keys[i - 1] = self.nodes[l].keys.pop().expect("rich sibling");
                if let Some(k) = (!self.nodes[l].is_leaf()).then(|| self.nodes[l].kids.pop().expect("inner node")) {
                    self.nodes[child].kids.insert(0, k);
                }
                self.wr(heap, l);
                self.wr(heap, child);
                self.wr(heap, x);
            } else if let Some(r) = right.filter(|&r| {
                self.rd(heap, r);
                self.nodes[r].keys.len() >= T
            }) {
                let sep = self.nodes[x].keys[i];
                self.nodes[child].keys.push(sep);
                self.nodes[x].keys[i] = self.nodes[r].keys.remove(0);
                if !self.nodes[r].is_leaf() {
                    let k = self.nodes[r].kids.remove(0);
                    self.nodes[child].kids.push(k);
                }
                self.wr(heap, r);
                self.wr(heap, child);
                self.wr(heap, x);
            } else if right.is_some() {
                self.merge(heap, x, i);
            } else {
                self.merge(heap, x, i - 1);
                i -= 1;
            }
        }
        let next = self.nodes[x].kids[i];
        self.delete_from(heap, next, key);
    }

    fn extreme(&self, heap: &mut SimHeap, mut x: usize, max: bool) -> u64 {
        loop {
            self.rd(heap, x);
            let node = &self.nodes[x];
            if node.is_leaf() {
                return if max { *node.keys.last().expect("non-empty") } else { node.keys[0] };
            }
            x = if max { *node.kids.last().expect("inner node") } else { node.kids[0] };
        }
    }

    /// Folds the separator `i` and child `i + 1` into child `i`.
    fn merge(&mut self, heap: &mut SimHeap, x: usize, i: usize) {
        let y = self.nodes[x].kids[i];
        let z = self.nodes[x].kids.remove(i + 1);
        let sep = self.nodes[x].keys.remove(i);
        let zkeys = std::mem::take(&mut self.nodes[z].keys);
        let zkids = std::mem::take(&mut self.nodes[z].kids);
        self.nodes[y].keys.push(sep);
        self.nodes[y].keys.extend(zkeys);
        self.nodes[y].kids.extend(zkids);
        self.free.push(z);
        self.wr(heap, y);
        self.wr(heap, x);
    }

    #[cfg(test)]
    /// In-order keys; checks structural invariants along the way.
    pub(crate) fn keys_checked(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut leaf_depth = None;
        self.walk(self.root, 0, true, &mut out, &mut leaf_depth);
        assert!(out.windows(2).all(|w| w[0] < w[1]), "keys out of order");
        out
    }

    #[cfg(test)]
    fn walk(&self, x: usize, depth: usize, is_root: bool, out: &mut Vec<u64>, leaf_depth: &mut Option<usize>) {
        let node = &self.nodes[x];
        assert!(node.keys.len() < 2 * T);
        if !is_root {
            assert!(node.keys.len() >= T - 1, "underfull node");
        }
        if node.is_leaf() {
            assert_eq!(*leaf_depth.get_or_insert(depth), depth, "leaves at different depths");
            out.extend(&node.keys);
            return;
        }
        assert_eq!(node.kids.len(), node.keys.len() + 1);
        for (j, &k) in node.kids.iter().enumerate() {
            self.walk(k, depth + 1, false, out, leaf_depth);
            if j < node.keys.len() {
                out.push(node.keys[j]);
            }
        }
    }
}

/// Two inserts, then one delete of a random live key, repeated.
pub(super) fn run(heap: &mut SimHeap, rng: &mut ChaCha8Rng, ops: u32) -> Result<(), WorkloadError> {
    let mut tree = BTree::new(heap)?;
    let mut live: Vec<u64> = Vec::new();
    for i in 0..ops {
        if live.is_empty() || i % 3 != 2 {
            let key = rng.random_range(0..KEY_SPACE);
            if tree.insert(heap, key)? {
                live.push(key);
            }
        } else {
            let victim = live.swap_remove(rng.random_range(0..live.len()));
            tree.remove(heap, victim);
        }
    }
    Ok(())
}
