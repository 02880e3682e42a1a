//! Left-leaning red-black tree with top-down deletion.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{SimHeap, WorkloadError};

pub(super) const SUITE_OPS: u32 = 1920;
const NODE_BYTES: u64 = 256;
const KEY_SPACE: u64 = 1 << 20;

type Link = Option<usize>;

#[derive(Debug, Clone)]
struct Node {
    key: u64,
    left: Link,
    right: Link,
    red: bool,
    addr: u64,
}

/// Red-black tree whose nodes live at simulated heap addresses.
#[derive(Debug, Default)]
pub(crate) struct RbTree {
    nodes: Vec<Node>,
    free: Vec<usize>,
    root: Link,
}

impl RbTree {
    pub(crate) fn new() -> Self {
        RbTree::default()
    }

    fn is_red(&self, l: Link) -> bool {
        l.is_some_and(|i| self.nodes[i].red)
    }

    fn left(&self, h: usize) -> Link {
        self.nodes[h].left
    }

    fn right(&self, h: usize) -> Link {
        self.nodes[h].right
    }

    fn touch(&self, heap: &mut SimHeap, h: usize) {
        heap.read(self.nodes[h].addr);
    }

    fn dirty(&self, heap: &mut SimHeap, h: usize) {
        heap.write(self.nodes[h].addr);
    }

    fn alloc(&mut self, heap: &mut SimHeap, key: u64) -> Result<usize, WorkloadError> {
        let id = match self.free.pop() {
            Some(id) => {
                let n = &mut self.nodes[id];
                n.key = key;
                n.left = None;
                n.right = None;
                n.red = true;
                id
            }
            None => {
                let addr = heap.alloc(NODE_BYTES, NODE_BYTES)?;
                self.nodes.push(Node { key, left: None, right: None, red: true, addr });
                self.nodes.len() - 1
            }
        };
        self.dirty(heap, id);
        Ok(id)
    }

    fn rotate_left(&mut self, heap: &mut SimHeap, h: usize) -> usize {
        let x = self.right(h).expect("red right link");
        self.nodes[h].right = self.nodes[x].left;
        self.nodes[x].left = Some(h);
        self.nodes[x].red = self.nodes[h].red;
        self.nodes[h].red = true;
        self.dirty(heap, h);
        self.dirty(heap, x);
        x
    }

    fn rotate_right(&mut self, heap: &mut SimHeap, h: usize) -> usize {
        let x = self.left(h).expect("red left link");
        self.nodes[h].left = self.nodes[x].right;
        self.nodes[x].right = Some(h);
        self.nodes[x].red = self.nodes[h].red;
        self.nodes[h].red = true;
        self.dirty(heap, h);
        self.dirty(heap, x);
        x
    }

    fn flip_colors(&mut self, heap: &mut SimHeap, h: usize) {
        self.nodes[h].red = !self.nodes[h].red;
        self.dirty(heap, h);
        for c in [self.left(h), self.right(h)].into_iter().flatten() {
            self.nodes[c].red = !self.nodes[c].red;
            self.dirty(heap, c);
        }
    }

    pub(crate) fn contains(&self, heap: &mut SimHeap, key: u64) -> bool {
        let mut cur = self.root;
        while let Some(h) = cur {
            self.touch(heap, h);
            let k = self.nodes[h].key;
            if key == k {
                return true;
            }
            cur = if key < k { self.left(h) } else { self.right(h) };
        }
        false
    }

    pub(crate) fn insert(&mut self, heap: &mut SimHeap, key: u64) -> Result<bool, WorkloadError> {
        if self.contains(heap, key) {
            return Ok(false);
        }
        let r = self.insert_at(heap, self.root, key)?;
        self.nodes[r].red = false;
        self.root = Some(r);
        Ok(true)
    }

    fn insert_at(&mut self, heap: &mut SimHeap, h: Link, key: u64) -> Result<usize, WorkloadError> {
        let Some(mut h) = h else {
            return self.alloc(heap, key);
        };
        self.touch(heap, h);
        if key < self.nodes[h].key {
            let l = self.insert_at(heap, self.left(h), key)?;
            self.nodes[h].left = Some(l);
        } else {
            let r = self.insert_at(heap, self.right(h), key)?;
            self.nodes[h].right = Some(r);
        }
        if self.is_red(self.right(h)) && !self.is_red(self.left(h)) {
            h = self.rotate_left(heap, h);
        }
        if self.is_red(self.left(h)) && self.is_red(self.left(h).and_then(|l| self.left(l))) {
            h = self.rotate_right(heap, h);
        }
        if self.is_red(self.left(h)) && self.is_red(self.right(h)) {
            self.flip_colors(heap, h);
        }
        Ok(h)
    }

    pub(crate) fn remove(&mut self, heap: &mut SimHeap, key: u64) -> bool {
        if !self.contains(heap, key) {
            return false;
        }
        let root = self.root.expect("non-empty");
        if !self.is_red(self.left(root)) && !self.is_red(self.right(root)) {
            self.nodes[root].red = true;
        }
        self.root = self.delete_at(heap, root, key);
        if let Some(r) = self.root {
            self.nodes[r].red = false;
        }
        true
    }

    fn move_red_left(&mut self, heap: &mut SimHeap, mut h: usize) -> usize {
        self.flip_colors(heap, h);
        let r = self.right(h).expect("right child");
        if self.is_red(self.left(r)) {
            let nr = self.rotate_right(heap, r);
            self.nodes[h].right = Some(nr);
            h = self.rotate_left(heap, h);
            self.flip_colors(heap, h);
        }
        h
    }

    fn move_red_right(&mut self, heap: &mut SimHeap, mut h: usize) -> usize {
        self.flip_colors(heap, h);
        let l = self.left(h).expect("left child");
        if self.is_red(self.left(l)) {
            h = self.rotate_right(heap, h);
            self.flip_colors(heap, h);
        }
        h
    }

    fn balance(&mut self, heap: &mut SimHeap, mut h: usize) -> usize {
        if self.is_red(self.right(h)) && !self.is_red(self.left(h)) {
            h = self.rotate_left(heap, h);
        }
        if self.is_red(self.left(h)) && self.is_red(self.left(h).and_then(|l| self.left(l))) {
            h = self.rotate_right(heap, h);
        }
        if self.is_red(self.left(h)) && self.is_red(self.right(h)) {
            self.flip_colors(heap, h);
        }
        h
    }

    fn delete_min(&mut self, heap: &mut SimHeap, mut h: usize) -> Link {
        self.touch(heap, h);
        let Some(l) = self.left(h) else {
            self.free.push(h);
            return None;
        };
        if !self.is_red(Some(l)) && !self.is_red(self.left(l)) {
            h = self.move_red_left(heap, h);
        }
        let l = self.left(h).expect("left child survives");
        let nl = self.delete_min(heap, l);
        self.nodes[h].left = nl;
        self.dirty(heap, h);
        Some(self.balance(heap, h))
    }

    fn delete_at(&mut self, heap: &mut SimHeap, mut h: usize, key: u64) -> Link {
        self.touch(heap, h);
        if key < self.nodes[h].key {
            let l = self.left(h).expect("key is present");
            if !self.is_red(Some(l)) && !self.is_red(self.left(l)) {
                h = self.move_red_left(heap, h);
            }
            let l = self.left(h).expect("key is present");
            let nl = self.delete_at(heap, l, key);
            self.nodes[h].left = nl;
        } else {
            if self.is_red(self.left(h)) {
                h = self.rotate_right(heap, h);
            }
            if key == self.nodes[h].key && self.right(h).is_none() {
                self.free.push(h);
                return None;
            }
            let r = self.right(h).expect("key is present");
            if !self.is_red(Some(r)) && !self.is_red(self.left(r)) {
                h = self.move_red_right(heap, h);
            }
            let r = self.right(h).expect("right child");
            if key == self.nodes[h].key {
                let mut m = r;
                while let Some(l) = self.left(m) {
                    self.touch(heap, m);
                    m = l;
                }
                self.nodes[h].key = self.nodes[m].key;
                let nr = self.delete_min(heap, r);
                self.nodes[h].right = nr;
            } else {
                let nr = self.delete_at(heap, r, key);
                self.nodes[h].right = nr;
            }
        }
        self.dirty(heap, h);
        Some(self.balance(heap, h))
    }

    #[cfg(test)]
    /// In-order keys; checks the red-black invariants along the way.
    pub(crate) fn keys_checked(&self) -> Vec<u64> {
        assert!(!self.is_red(self.root), "red root");
        let mut out = Vec::new();
        self.check(self.root, &mut out);
        assert!(out.windows(2).all(|w| w[0] < w[1]), "keys out of order");
        out
    }

    #[cfg(test)]
    /// Returns the black height.
    fn check(&self, h: Link, out: &mut Vec<u64>) -> usize {
        let Some(h) = h else {
            return 0;
        };
        let n = &self.nodes[h];
        assert!(!self.is_red(n.right), "right-leaning red link");
        if n.red {
            assert!(!self.is_red(n.left), "two reds in a row");
        }
        let lb = self.check(n.left, out);
        out.push(n.key);
        let rb = self.check(n.right, out);
        assert_eq!(lb, rb, "unequal black height");
        lb + usize::from(!n.red)
    }
}

/// Mixed inserts and deletes, as in the B-tree workload.
pub(super) fn run(heap: &mut SimHeap, rng: &mut ChaCha8Rng, ops: u32) -> Result<(), WorkloadError> {
    let mut tree = RbTree::new();
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
