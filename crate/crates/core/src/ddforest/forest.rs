use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::hash::Digest;
use super::tree::{DefenseTree, StorageOverhead, TreeDump};
use super::{
    Arity, ForestError, LeafAction, LeafRecord, TreeId, Verification, VerifyOutcome, LEAVES_PER_TREE, SLOT_BYTES,
};

/// Root digests held in secure memory. Only the forest's trusted update
/// paths write here.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SecureRootStore {
    roots: BTreeMap<TreeId, Digest>,
}

impl SecureRootStore {
    pub fn get(&self, id: TreeId) -> Option<&Digest> {
        self.roots.get(&id)
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TreeId, &Digest)> {
        self.roots.iter()
    }

    fn set(&mut self, id: TreeId, root: Digest) {
        self.roots.insert(id, root);
    }
}

/// Leaves registered by a first-access fault and awaiting formal addition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PendingSet {
    entries: BTreeSet<(TreeId, u32)>,
}

impl PendingSet {
    pub fn contains(&self, tree: TreeId, leaf: u32) -> bool {
        self.entries.contains(&(tree, leaf))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Aggregate memory held by the forest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ForestFootprint {
    pub trees: usize,
    pub index_bytes: u64,
    pub hash_bytes: u64,
    pub protected_bytes: u64,
    pub root_bytes: u64,
}

impl ForestFootprint {
    /// Everything the forest keeps: index and hash slots, the leaf records
    /// themselves, and the secure roots.
    pub fn total_bytes(&self) -> u64 {
        self.index_bytes + self.hash_bytes + self.protected_bytes + self.root_bytes
    }

    pub fn overhead_ratio(&self) -> f64 {
        if self.protected_bytes == 0 {
            0.0
        } else {
            (self.index_bytes + self.hash_bytes) as f64 / self.protected_bytes as f64
        }
    }
}

/// One tree per PUD entry, created on demand.
#[derive(Debug, Clone)]
pub struct DefenseForest {
    arity: Arity,
    leaf_count: u32,
    trees: BTreeMap<TreeId, DefenseTree>,
    roots: SecureRootStore,
    pending: PendingSet,
}

impl DefenseForest {
    pub fn new(arity: Arity) -> Self {
        Self::with_leaf_count(arity, LEAVES_PER_TREE).expect("default leaf count is valid")
    }

    /// A forest whose trees have `leaf_count` slots instead of the default.
    pub fn with_leaf_count(arity: Arity, leaf_count: u32) -> Result<Self, ForestError> {
        // validate once up front
        DefenseTree::new(arity, leaf_count)?;
        Ok(DefenseForest {
            arity,
            leaf_count,
            trees: BTreeMap::new(),
            roots: SecureRootStore::default(),
            pending: PendingSet::default(),
        })
    }

    pub fn arity(&self) -> Arity {
        self.arity
    }

    pub fn leaf_count(&self) -> u32 {
        self.leaf_count
    }

    /// Hashes per verification for every tree in this forest.
    pub fn height(&self) -> u8 {
        self.arity.height_for(self.leaf_count)
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn tree_ids(&self) -> impl Iterator<Item = TreeId> + '_ {
        self.trees.keys().copied()
    }

    pub fn tree(&self, id: TreeId) -> Option<&DefenseTree> {
        self.trees.get(&id)
    }

    /// Mutable access to a tree's node memory outside the trusted paths.
    /// Used to model an adversary scribbling over tree storage; the secure
    /// root stays out of reach.
    pub fn untrusted_tree_mut(&mut self, id: TreeId) -> Option<&mut DefenseTree> {
        self.trees.get_mut(&id)
    }

    pub fn roots(&self) -> &SecureRootStore {
        &self.roots
    }

    pub fn root(&self, id: TreeId) -> Option<Digest> {
        self.roots.get(id).copied()
    }

    pub fn pending(&self) -> &PendingSet {
        &self.pending
    }

    fn check_leaf(&self, leaf: u32) -> Result<(), ForestError> {
        if leaf >= self.leaf_count {
            return Err(ForestError::LeafOutOfRange { index: leaf, leaf_count: self.leaf_count });
        }
        Ok(())
    }

    fn ensure_tree(&mut self, id: TreeId) -> &mut DefenseTree {
        if !self.trees.contains_key(&id) {
            let tree = DefenseTree::new(self.arity, self.leaf_count).expect("validated at construction");
            self.roots.set(id, tree.empty_root());
            self.trees.insert(id, tree);
        }
        self.trees.get_mut(&id).expect("just ensured")
    }

    /// Registers a leaf for protection once its entry is complete. Creates
    /// the tree if needed. Returns false if the pair was already pending.
    pub fn pre_add(&mut self, tree: TreeId, leaf: u32) -> Result<bool, ForestError> {
        self.check_leaf(leaf)?;
        self.ensure_tree(tree);
        Ok(self.pending.entries.insert((tree, leaf)))
    }

    pub fn is_pending(&self, tree: TreeId, leaf: u32) -> bool {
        self.pending.contains(tree, leaf)
    }

    /// Drops a pending registration, e.g. when the page goes away before
    /// its entry is ever committed.
    pub fn cancel_pending(&mut self, tree: TreeId, leaf: u32) -> bool {
        self.pending.entries.remove(&(tree, leaf))
    }

    /// Commits a pending leaf. Returns the number of internal hashes computed.
    pub fn formal_add(&mut self, tree: TreeId, leaf: u32, present: bool, frame: u64) -> Result<u32, ForestError> {
        if !self.pending.entries.remove(&(tree, leaf)) {
            return Err(ForestError::NotPending { tree, leaf });
        }
        let t = self.ensure_tree(tree);
        let (root, ops) = t.write_leaf(leaf, LeafRecord::new(present, frame))?;
        self.roots.set(tree, root);
        Ok(ops)
    }

    /// Read-only path check against the secure root. Unknown trees have no
    /// record for anything.
    pub fn verify_leaf(&self, tree: TreeId, leaf: u32) -> Verification {
        match (self.trees.get(&tree), self.roots.get(tree)) {
            (Some(t), Some(root)) => t.verify(leaf, root),
            _ => Verification { outcome: VerifyOutcome::NoRecord, hash_ops: 0 },
        }
    }

    /// Trusted removal or rewrite of an occupied leaf.
    pub fn update_or_remove_leaf(&mut self, tree: TreeId, leaf: u32, action: LeafAction) -> Result<u32, ForestError> {
        self.check_leaf(leaf)?;
        let t = self.trees.get_mut(&tree).ok_or(ForestError::UnknownTree(tree))?;
        if !t.record(leaf).occupied {
            return Err(ForestError::LeafVacant { tree, leaf });
        }
        let record = match action {
            LeafAction::Remove => LeafRecord::EMPTY,
            LeafAction::Update { present, frame } => LeafRecord::new(present, frame),
        };
        let (root, ops) = t.write_leaf(leaf, record)?;
        self.roots.set(tree, root);
        Ok(ops)
    }

    /// Installs a fully built tree in one pass, replacing any existing one.
    pub fn install_tree(
        &mut self,
        tree: TreeId,
        records: impl IntoIterator<Item = (u32, LeafRecord)>,
    ) -> Result<(), ForestError> {
        let mut t = DefenseTree::new(self.arity, self.leaf_count)?;
        let root = t.rebuild(records)?;
        self.trees.insert(tree, t);
        self.roots.set(tree, root);
        Ok(())
    }

    pub fn storage_overhead(&self, tree: TreeId) -> Option<StorageOverhead> {
        self.trees.get(&tree).map(DefenseTree::storage_overhead)
    }

    pub fn footprint(&self) -> ForestFootprint {
        let mut fp = ForestFootprint { trees: self.trees.len(), ..Default::default() };
        for t in self.trees.values() {
            let o = t.storage_overhead();
            fp.index_bytes += o.index_bytes;
            fp.hash_bytes += o.hash_bytes;
            fp.protected_bytes += o.protected_bytes;
        }
        fp.root_bytes = self.roots.len() as u64 * SLOT_BYTES;
        fp
    }

    pub fn dump(&self, tree: TreeId) -> Option<TreeDump> {
        Some(self.trees.get(&tree)?.dump(tree, self.roots.get(tree)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddforest::NodeId;

    fn forest() -> DefenseForest {
        DefenseForest::new(Arity::new(8).unwrap())
    }

    #[test]
    fn pre_add_creates_tree_lazily() {
        let mut f = forest();
        assert!(f.pre_add(TreeId(0x1000), 5).unwrap());
        assert_eq!(f.tree_count(), 1);
        assert_eq!(f.pending().len(), 1);
        assert!(!f.tree(TreeId(0x1000)).unwrap().record(5).occupied);

        assert!(!f.pre_add(TreeId(0x1000), 5).unwrap());
        assert_eq!(f.pending().len(), 1);

        f.pre_add(TreeId(0x2000), 5).unwrap();
        assert_eq!(f.tree_count(), 2);
        assert_eq!(f.roots().len(), 2);
    }

    #[test]
    fn formal_add_then_verify() {
        let mut f = forest();
        let id = TreeId(0x1000);
        f.pre_add(id, 77).unwrap();
        assert_eq!(f.formal_add(id, 77, true, 9).unwrap(), 6);
        let v = f.verify_leaf(id, 77);
        assert_eq!(v.outcome, VerifyOutcome::AuthenticRecord(LeafRecord::new(true, 9)));
        assert_eq!(v.hash_ops, 6);
        assert!(f.pending().is_empty());
    }

    #[test]
    fn formal_add_requires_pre_add() {
        let mut f = forest();
        assert_eq!(
            f.formal_add(TreeId(1), 3, true, 1),
            Err(ForestError::NotPending { tree: TreeId(1), leaf: 3 })
        );
        f.pre_add(TreeId(1), 3).unwrap();
        f.formal_add(TreeId(1), 3, true, 1).unwrap();
        // consumed exactly once
        assert!(f.formal_add(TreeId(1), 3, true, 1).is_err());
    }

    #[test]
    fn fresh_tree_has_no_records() {
        let mut f = forest();
        assert_eq!(f.verify_leaf(TreeId(9), 0).outcome, VerifyOutcome::NoRecord);
        f.pre_add(TreeId(9), 0).unwrap();
        let v = f.verify_leaf(TreeId(9), 1234);
        assert_eq!(v.outcome, VerifyOutcome::NoRecord);
        assert_eq!(v.hash_ops, 6);
    }

    #[test]
    fn remove_and_identity_update() {
        let mut f = forest();
        let id = TreeId(0x40);
        f.pre_add(id, 10).unwrap();
        f.formal_add(id, 10, true, 4).unwrap();
        let root = f.root(id).unwrap();
        f.update_or_remove_leaf(id, 10, LeafAction::Update { present: true, frame: 4 }).unwrap();
        assert_eq!(f.root(id).unwrap(), root);
        f.update_or_remove_leaf(id, 10, LeafAction::Remove).unwrap();
        assert_eq!(f.verify_leaf(id, 10).outcome, VerifyOutcome::NoRecord);
        assert_eq!(f.root(id).unwrap(), f.tree(id).unwrap().empty_root());
        assert_eq!(
            f.update_or_remove_leaf(id, 10, LeafAction::Remove),
            Err(ForestError::LeafVacant { tree: id, leaf: 10 })
        );
        assert_eq!(
            f.update_or_remove_leaf(TreeId(1), 10, LeafAction::Remove),
            Err(ForestError::UnknownTree(TreeId(1)))
        );
    }

    #[test]
    fn trees_are_isolated() {
        let mut f = forest();
        let (a, b) = (TreeId(1), TreeId(2));
        f.pre_add(a, 1).unwrap();
        f.pre_add(b, 1).unwrap();
        f.formal_add(a, 1, true, 1).unwrap();
        let rb = f.root(b).unwrap();
        f.formal_add(b, 1, true, 2).unwrap();
        let ra = f.root(a).unwrap();
        assert_ne!(f.root(b).unwrap(), rb);
        f.update_or_remove_leaf(b, 1, LeafAction::Remove).unwrap();
        f.untrusted_tree_mut(b).unwrap().corrupt_leaf_bit(1, 2);
        assert_eq!(f.root(a).unwrap(), ra);
        assert_eq!(f.verify_leaf(a, 1).outcome, VerifyOutcome::AuthenticRecord(LeafRecord::new(true, 1)));
    }

    #[test]
    fn out_of_range_leaf() {
        let mut f = DefenseForest::with_leaf_count(Arity::new(2).unwrap(), 8).unwrap();
        assert!(matches!(f.pre_add(TreeId(1), 8), Err(ForestError::LeafOutOfRange { .. })));
        assert!(DefenseForest::with_leaf_count(Arity::new(2).unwrap(), 1).is_err());
    }

    #[test]
    fn tampered_node_and_leaf_detected() {
        let mut f = forest();
        let id = TreeId(7);
        for leaf in [0u32, 1, 600] {
            f.pre_add(id, leaf).unwrap();
            f.formal_add(id, leaf, true, leaf as u64 + 100).unwrap();
        }
        let t = f.untrusted_tree_mut(id).unwrap();
        assert!(t.corrupt_node_bit(NodeId { depth: 5, first_leaf: 0 }, 17));
        assert_eq!(f.verify_leaf(id, 0).outcome, VerifyOutcome::TamperDetected);
        assert_eq!(f.verify_leaf(id, 1).outcome, VerifyOutcome::TamperDetected);
        assert!(matches!(f.verify_leaf(id, 600).outcome, VerifyOutcome::AuthenticRecord(_)));
    }

    #[test]
    fn empty_tree_overhead_is_finite() {
        let mut f = forest();
        f.pre_add(TreeId(3), 0).unwrap();
        let o = f.storage_overhead(TreeId(3)).unwrap();
        assert_eq!(o.total, 0.0);
        assert!(o.total.is_finite());
    }

    #[test]
    fn dump_lists_occupied_leaves() {
        let mut f = forest();
        let id = TreeId(0xabc);
        f.pre_add(id, 2).unwrap();
        f.formal_add(id, 2, true, 5).unwrap();
        let d = f.dump(id).unwrap();
        assert_eq!(d.occupied.len(), 1);
        assert_eq!(d.root_hex, hex::encode(f.root(id).unwrap()));
        let json = serde_json::to_string(&d).unwrap();
        let back: super::super::TreeDump = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }
}
