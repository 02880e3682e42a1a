//! Integrity forest for leaf page-table entries.
//!
//! Each tree covers the 512 × 512 leaf PTEs that hang under one PUD entry.
//! A leaf slot records whether the page is present and which frame backs it;
//! internal nodes commit to their children, and only the root digests are
//! kept in secure memory. Trees have a fixed, complete m-ary shape, so a
//! verification always hashes exactly `ceil(log_m(leaf_count))` nodes.

mod forest;
pub mod hash;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paging::PageIndices;

pub use forest::{DefenseForest, ForestFootprint, PendingSet, SecureRootStore};
pub use hash::Digest;
pub use tree::{DefenseTree, NodeId, StorageOverhead, TreeDump, DumpedLeaf};

/// Leaf slots per tree: every PMD index × every PT index under one PUD entry.
pub const LEAVES_PER_TREE: u32 = 512 * 512;

/// Bytes per node slot in the storage accounting model (one digest).
pub const SLOT_BYTES: u64 = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ForestError {
    #[error("arity must be at least 2, got {0}")]
    BadArity(u32),
    #[error("a tree needs at least 2 leaf slots, got {0}")]
    BadLeafCount(u32),
    #[error("leaf index {index} out of range for {leaf_count} slots")]
    LeafOutOfRange { index: u32, leaf_count: u32 },
    #[error("formal addition of leaf {leaf} in tree {tree:?} without a pending pre-addition")]
    NotPending { tree: TreeId, leaf: u32 },
    #[error("leaf {leaf} in tree {tree:?} is vacant")]
    LeafVacant { tree: TreeId, leaf: u32 },
    #[error("no tree with id {0:?}")]
    UnknownTree(TreeId),
}

/// Identifies one tree: the physical address of the PUD entry it protects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TreeId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Arity(u8);

impl Arity {
    pub fn new(m: u32) -> Result<Self, ForestError> {
        if !(2..=u8::MAX as u32).contains(&m) {
            return Err(ForestError::BadArity(m));
        }
        Ok(Arity(m as u8))
    }

    pub fn get(self) -> u32 {
        self.0 as u32
    }

    /// `ceil(log_m(leaves))`, computed with integers.
    pub fn height_for(self, leaves: u32) -> u8 {
        let m = self.get() as u64;
        let (mut h, mut cap) = (0u8, 1u64);
        while cap < leaves as u64 {
            cap *= m;
            h += 1;
        }
        h
    }
}

impl Default for Arity {
    fn default() -> Self {
        Arity(8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LeafRecord {
    pub occupied: bool,
    pub present: bool,
    pub frame: u64,
}

impl LeafRecord {
    pub const EMPTY: LeafRecord = LeafRecord { occupied: false, present: false, frame: 0 };

    pub fn new(present: bool, frame: u64) -> Self {
        LeafRecord { occupied: true, present, frame }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyOutcome {
    AuthenticRecord(LeafRecord),
    NoRecord,
    TamperDetected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verification {
    pub outcome: VerifyOutcome,
    /// Internal-node hashes computed while checking the path.
    pub hash_ops: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafAction {
    Remove,
    Update { present: bool, frame: u64 },
}

/// Position of a page's record inside its PUD's tree.
pub fn leaf_index_of(idx: &PageIndices) -> u32 {
    (idx.pmd as u32) << 9 | idx.pt as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn leaf_index_examples() {
        let at = |pmd, pt| leaf_index_of(&PageIndices::new(0, 0, pmd, pt, 0).unwrap());
        assert_eq!(at(0, 0), 0);
        assert_eq!(at(3, 4), 1540);
        assert_eq!(at(511, 511), LEAVES_PER_TREE - 1);
    }

    #[test]
    fn leaf_index_is_bijective() {
        let mut seen = HashSet::new();
        for pmd in 0..512u16 {
            for pt in 0..512u16 {
                let i = leaf_index_of(&PageIndices::new(7, 9, pmd, pt, 0).unwrap());
                assert!(i < LEAVES_PER_TREE);
                seen.insert(i);
            }
        }
        assert_eq!(seen.len(), LEAVES_PER_TREE as usize);
    }

    #[test]
    fn heights() {
        let h = |m| Arity::new(m).unwrap().height_for(LEAVES_PER_TREE);
        assert_eq!(h(2), 18);
        assert_eq!(h(4), 9);
        assert_eq!(h(6), 7);
        assert_eq!(h(8), 6);
        assert!(Arity::new(1).is_err());
        assert_eq!(Arity::new(2).unwrap().height_for(8), 3);
    }
}
