use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::hash::{leaf_digest, node_digest, Digest};
use super::{Arity, ForestError, LeafRecord, TreeId, Verification, VerifyOutcome, SLOT_BYTES};

/// A node is named by its depth (root = 0) and the first leaf it covers.
/// Leaves are the nodes at depth `height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub depth: u8,
    pub first_leaf: u32,
}

#[derive(Debug, Clone, Copy)]
struct PathStep {
    node: NodeId,
    span: u32,
    // which child of `node` lies on the path
    slot: usize,
}

/// Splits `span` leaves among at most `arity` children: the first
/// `span % c` children take one extra leaf.
#[derive(Debug, Clone, Copy)]
struct Split {
    first: u32,
    count: u32,
    base: u32,
    extra: u32,
}

impl Split {
    fn new(first: u32, span: u32, arity: u32) -> Self {
        let count = arity.min(span);
        Split { first, count, base: span / count, extra: span % count }
    }

    fn child(&self, i: u32) -> (u32, u32) {
        let start = self.first + i * self.base + i.min(self.extra);
        let span = self.base + (i < self.extra) as u32;
        (start, span)
    }

    fn slot_of(&self, leaf: u32) -> u32 {
        let off = leaf - self.first;
        let wide = self.extra * (self.base + 1);
        if off < wide {
            off / (self.base + 1)
        } else {
            self.extra + (off - wide) / self.base
        }
    }
}

/// Byte counts behind the storage-overhead ratio. Every internal node is
/// one index slot, every bottom-level node additionally carries the digest
/// of its leaf group, and each occupied leaf is one protected slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageOverhead {
    pub index_bytes: u64,
    pub hash_bytes: u64,
    pub protected_bytes: u64,
    pub index_ratio: f64,
    pub hash_ratio: f64,
    pub total: f64,
}

impl StorageOverhead {
    pub(crate) fn from_bytes(index_bytes: u64, hash_bytes: u64, protected_bytes: u64) -> Self {
        let ratio = |x: u64| if protected_bytes == 0 { 0.0 } else { x as f64 / protected_bytes as f64 };
        StorageOverhead {
            index_bytes,
            hash_bytes,
            protected_bytes,
            index_ratio: ratio(index_bytes),
            hash_ratio: ratio(hash_bytes),
            total: ratio(index_bytes + hash_bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpedLeaf {
    pub leaf_index: u32,
    pub present: bool,
    pub frame: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDump {
    pub tree_id: TreeId,
    pub arity: u32,
    pub height: u8,
    pub occupied: Vec<DumpedLeaf>,
    pub root_hex: String,
}

/// One fixed-shape m-ary hash tree. Only subtrees that contain an occupied
/// leaf hold stored digests; vacant subtrees fall back to precomputed
/// digests per (depth, span). The root digest is not kept here.
#[derive(Debug, Clone)]
pub struct DefenseTree {
    arity: Arity,
    leaf_count: u32,
    height: u8,
    leaves: BTreeMap<u32, LeafRecord>,
    nodes: HashMap<NodeId, Digest>,
    vacant: HashMap<(u8, u32), Digest>,
}

impl DefenseTree {
    pub fn new(arity: Arity, leaf_count: u32) -> Result<Self, ForestError> {
        if leaf_count < 2 {
            return Err(ForestError::BadLeafCount(leaf_count));
        }
        let mut tree = DefenseTree {
            arity,
            leaf_count,
            height: arity.height_for(leaf_count),
            leaves: BTreeMap::new(),
            nodes: HashMap::new(),
            vacant: HashMap::new(),
        };
        tree.fill_vacant(0, leaf_count);
        Ok(tree)
    }

    fn fill_vacant(&mut self, depth: u8, span: u32) -> Digest {
        if let Some(d) = self.vacant.get(&(depth, span)) {
            return *d;
        }
        let d = if depth == self.height {
            debug_assert_eq!(span, 1);
            leaf_digest(0, &LeafRecord::EMPTY)
        } else {
            let split = Split::new(0, span, self.arity.get());
            let kids: Vec<Digest> =
                (0..split.count).map(|i| self.fill_vacant(depth + 1, split.child(i).1)).collect();
            node_digest(depth, &kids)
        };
        self.vacant.insert((depth, span), d);
        d
    }

    pub fn arity(&self) -> Arity {
        self.arity
    }

    pub fn leaf_count(&self) -> u32 {
        self.leaf_count
    }

    /// Edges from the root to any leaf.
    pub fn height(&self) -> u8 {
        self.height
    }

    pub fn occupied_count(&self) -> usize {
        self.leaves.values().filter(|r| r.occupied).count()
    }

    /// Digest of a tree with no occupied leaves.
    pub fn empty_root(&self) -> Digest {
        self.vacant[&(0, self.leaf_count)]
    }

    pub fn record(&self, leaf: u32) -> LeafRecord {
        self.leaves.get(&leaf).copied().unwrap_or(LeafRecord::EMPTY)
    }

    pub fn occupied(&self) -> impl Iterator<Item = (u32, LeafRecord)> + '_ {
        self.leaves.iter().filter(|(_, r)| r.occupied).map(|(i, r)| (*i, *r))
    }

    fn check_leaf(&self, leaf: u32) -> Result<(), ForestError> {
        if leaf >= self.leaf_count {
            return Err(ForestError::LeafOutOfRange { index: leaf, leaf_count: self.leaf_count });
        }
        Ok(())
    }

    fn path(&self, leaf: u32) -> Vec<PathStep> {
        let mut steps = Vec::with_capacity(self.height as usize);
        let (mut first, mut span) = (0u32, self.leaf_count);
        for depth in 0..self.height {
            let split = Split::new(first, span, self.arity.get());
            let slot = split.slot_of(leaf);
            steps.push(PathStep { node: NodeId { depth, first_leaf: first }, span, slot: slot as usize });
            (first, span) = split.child(slot);
        }
        debug_assert_eq!((first, span), (leaf, 1));
        steps
    }

    fn children(&self, node: NodeId, span: u32) -> impl Iterator<Item = (NodeId, u32)> {
        let split = Split::new(node.first_leaf, span, self.arity.get());
        let depth = node.depth + 1;
        (0..split.count).map(move |i| {
            let (first_leaf, span) = split.child(i);
            (NodeId { depth, first_leaf }, span)
        })
    }

    /// Current stored digest of a non-root node (or its vacant default).
    fn stored(&self, node: NodeId, span: u32) -> Digest {
        if node.depth == self.height {
            return leaf_digest(node.first_leaf, &self.record(node.first_leaf));
        }
        self.nodes.get(&node).copied().unwrap_or_else(|| self.vacant[&(node.depth, span)])
    }

    fn recompute(&self, step: &PathStep, on_path: &Digest) -> Digest {
        let kids: Vec<Digest> = self
            .children(step.node, step.span)
            .enumerate()
            .map(|(i, (c, s))| if i == step.slot { *on_path } else { self.stored(c, s) })
            .collect();
        node_digest(step.node.depth, &kids)
    }

    /// Checks the leaf against `root`: recomputes each ancestor from its
    /// children and compares it with the stored copy, and finally with the
    /// trusted root. Always hashes the full path.
    pub fn verify(&self, leaf: u32, root: &Digest) -> Verification {
        if leaf >= self.leaf_count {
            return Verification { outcome: VerifyOutcome::TamperDetected, hash_ops: 0 };
        }
        let record = self.record(leaf);
        let mut current = leaf_digest(leaf, &record);
        let mut intact = true;
        let mut hash_ops = 0;
        for step in self.path(leaf).iter().rev() {
            let computed = self.recompute(step, &current);
            hash_ops += 1;
            let expected = if step.node.depth == 0 { *root } else { self.stored(step.node, step.span) };
            intact &= computed == expected;
            current = computed;
        }
        let outcome = match (intact, record.occupied) {
            (false, _) => VerifyOutcome::TamperDetected,
            (true, true) => VerifyOutcome::AuthenticRecord(record),
            (true, false) => VerifyOutcome::NoRecord,
        };
        Verification { outcome, hash_ops }
    }

    /// Writes a leaf and refreshes every digest on its path. Returns the new
    /// root and the number of internal hashes computed.
    pub(crate) fn write_leaf(&mut self, leaf: u32, record: LeafRecord) -> Result<(Digest, u32), ForestError> {
        self.check_leaf(leaf)?;
        if record.occupied {
            self.leaves.insert(leaf, record);
        } else {
            self.leaves.remove(&leaf);
        }
        let mut current = leaf_digest(leaf, &record);
        let mut ops = 0;
        for step in self.path(leaf).iter().rev() {
            current = self.recompute(step, &current);
            ops += 1;
            if step.node.depth > 0 {
                if current == self.vacant[&(step.node.depth, step.span)] {
                    self.nodes.remove(&step.node);
                } else {
                    self.nodes.insert(step.node, current);
                }
            }
        }
        Ok((current, ops))
    }

    /// Replaces all contents with `records` and rebuilds every digest
    /// bottom-up. Returns the new root.
    pub(crate) fn rebuild(&mut self, records: impl IntoIterator<Item = (u32, LeafRecord)>) -> Result<Digest, ForestError> {
        self.leaves.clear();
        self.nodes.clear();
        for (i, r) in records {
            self.check_leaf(i)?;
            if r.occupied {
                self.leaves.insert(i, r);
            }
        }
        Ok(self.rebuild_node(NodeId { depth: 0, first_leaf: 0 }, self.leaf_count))
    }

    fn rebuild_node(&mut self, node: NodeId, span: u32) -> Digest {
        if node.depth == self.height {
            return leaf_digest(node.first_leaf, &self.record(node.first_leaf));
        }
        let end = node.first_leaf + span;
        if self.leaves.range(node.first_leaf..end).next().is_none() {
            return self.vacant[&(node.depth, span)];
        }
        let kids: Vec<(NodeId, u32)> = self.children(node, span).collect();
        let digests: Vec<Digest> = kids.into_iter().map(|(c, s)| self.rebuild_node(c, s)).collect();
        let d = node_digest(node.depth, &digests);
        if node.depth > 0 {
            self.nodes.insert(node, d);
        }
        d
    }

    pub fn storage_overhead(&self) -> StorageOverhead {
        let occupied = self.occupied_count() as u64;
        if occupied == 0 {
            return StorageOverhead::from_bytes(0, 0, 0);
        }
        let bottom = self.height - 1;
        let internal = self.nodes.len() as u64 + 1;
        let groups = if bottom == 0 {
            1
        } else {
            self.nodes.keys().filter(|n| n.depth == bottom).count() as u64
        };
        StorageOverhead::from_bytes(internal * SLOT_BYTES, groups * SLOT_BYTES, occupied * SLOT_BYTES)
    }

    /// Stored non-root node digests, sorted.
    pub fn stored_nodes(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.nodes.keys().copied().collect();
        v.sort();
        v
    }

    /// Stored digest of a non-root node; `None` for vacant or unknown nodes.
    pub fn stored_digest(&self, node: NodeId) -> Option<Digest> {
        self.nodes.get(&node).copied()
    }

    /// Span (number of leaves) covered by `node`, found by walking down.
    pub fn span_of(&self, node: NodeId) -> Option<u32> {
        let (mut first, mut span) = (0u32, self.leaf_count);
        for depth in 0..node.depth {
            if node.first_leaf < first || node.first_leaf >= first + span || depth >= self.height {
                return None;
            }
            let split = Split::new(first, span, self.arity.get());
            (first, span) = split.child(split.slot_of(node.first_leaf));
        }
        (first == node.first_leaf).then_some(span)
    }

    /// Flips one bit of a stored node digest, bypassing the update path.
    /// Models a write to the tree's (untrusted) memory. Returns false when
    /// the node holds no stored digest.
    pub fn corrupt_node_bit(&mut self, node: NodeId, bit: u32) -> bool {
        match self.nodes.get_mut(&node) {
            Some(d) => {
                d[(bit / 8) as usize % 32] ^= 1 << (bit % 8);
                true
            }
            None => false,
        }
    }

    /// Flips one bit of a leaf record's encoding: bit 0 is `occupied`, bit 1
    /// is `present`, bits 2..66 are the frame. Bypasses the update path.
    pub fn corrupt_leaf_bit(&mut self, leaf: u32, bit: u32) {
        let mut r = self.record(leaf);
        match bit % 66 {
            0 => r.occupied ^= true,
            1 => r.present ^= true,
            b => r.frame ^= 1 << (b - 2),
        }
        self.leaves.insert(leaf, r);
    }

    /// Overwrites a leaf record without touching any digest.
    pub fn corrupt_leaf(&mut self, leaf: u32, record: LeafRecord) {
        self.leaves.insert(leaf, record);
    }

    pub fn dump(&self, tree_id: TreeId, root: &Digest) -> TreeDump {
        TreeDump {
            tree_id,
            arity: self.arity.get(),
            height: self.height,
            occupied: self
                .occupied()
                .map(|(leaf_index, r)| DumpedLeaf { leaf_index, present: r.present, frame: r.frame })
                .collect(),
            root_hex: hex::encode(root),
        }
    }
}
