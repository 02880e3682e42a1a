//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use ptguard::ddforest::{DefenseTree, NodeId};
use sha2::{Digest as _, Sha256};

pub type Hash = [u8; 32];

/// Recomputes tree digests from scratch with a plain recursive walk.
pub struct MerkleOracle {
    pub arity: u32,
    pub leaf_count: u32,
    pub height: u8,
    records: BTreeMap<u32, (bool, u64)>,
    vacant: HashMap<(u8, u32), Hash>,
}

impl MerkleOracle {
    pub fn new(arity: u32, leaf_count: u32, records: impl IntoIterator<Item = (u32, (bool, u64))>) -> Self {
        let mut height = 0u8;
        let mut reach = 1u64;
        while reach < leaf_count as u64 {
            reach *= arity as u64;
            height += 1;
        }
        MerkleOracle { arity, leaf_count, height, records: records.into_iter().collect(), vacant: HashMap::new() }
    }

    fn leaf(index: u32, rec: Option<(bool, u64)>) -> Hash {
        let mut h = Sha256::new();
        h.update([0x00]);
        match rec {
            Some((present, frame)) => {
                h.update(index.to_le_bytes());
                h.update([1, present as u8]);
                h.update(frame.to_le_bytes());
            }
            None => h.update([0u8; 14]),
        }
        h.finalize().into()
    }

    fn children(&self, first: u32, span: u32) -> Vec<(u32, u32)> {
        let count = self.arity.min(span);
        let (base, extra) = (span / count, span % count);
        (0..count).map(|i| (first + i * base + i.min(extra), base + u32::from(i < extra))).collect()
    }

    /// Digest of the subtree rooted at (depth, first) covering `span` leaves.
    /// Every internal digest computed is written to `out` when given.
    pub fn subtree(&mut self, depth: u8, first: u32, span: u32, out: &mut Option<&mut BTreeMap<(u8, u32), Hash>>) -> Hash {
        if depth == self.height {
            assert_eq!(span, 1, "leaf reached at the wrong depth");
            return Self::leaf(first, self.records.get(&first).copied());
        }
        let empty = self.records.range(first..first + span).next().is_none();
        if empty {
            if let Some(d) = self.vacant.get(&(depth, span)) {
                return *d;
            }
        }
        let mut h = Sha256::new();
        h.update([0x01, depth]);
        for (f, s) in self.children(first, span) {
            h.update(self.subtree(depth + 1, f, s, out));
        }
        let d: Hash = h.finalize().into();
        if empty {
            self.vacant.insert((depth, span), d);
        } else if let Some(map) = out.as_deref_mut() {
            map.insert((depth, first), d);
        }
        d
    }

    pub fn root(&mut self) -> Hash {
        self.subtree(0, 0, self.leaf_count, &mut None)
    }

    /// Root plus every non-vacant internal digest, keyed by (depth, first leaf).
    pub fn digests(&mut self) -> BTreeMap<(u8, u32), Hash> {
        let mut map = BTreeMap::new();
        self.subtree(0, 0, self.leaf_count, &mut Some(&mut map));
        map
    }

    pub fn set(&mut self, leaf: u32, rec: Option<(bool, u64)>) {
        match rec {
            Some(r) => self.records.insert(leaf, r),
            None => self.records.remove(&leaf),
        };
    }
}

/// Smallest h with arity^h >= n.
pub fn ceil_log(arity: u64, n: u64) -> u32 {
    let (mut h, mut reach) = (0, 1u64);
    while reach < n {
        reach *= arity;
        h += 1;
    }
    h
}

/// Leaves whose verification path reads `node`: those under it, plus those
/// under its parent (which read it as a sibling).
pub fn leaves_reading(tree: &DefenseTree, node: NodeId) -> std::ops::Range<u32> {
    let parent_depth = node.depth.saturating_sub(1);
    let mut first = 0;
    let mut span = tree.leaf_count();
    // walk down to the parent of `node`
    for _ in 0..parent_depth {
        let count = tree.arity().get().min(span);
        let (base, extra) = (span / count, span % count);
        for i in 0..count {
            let (f, s) = (first + i * base + i.min(extra), base + u32::from(i < extra));
            if node.first_leaf >= f && node.first_leaf < f + s {
                first = f;
                span = s;
                break;
            }
        }
    }
    first..first + span
}
