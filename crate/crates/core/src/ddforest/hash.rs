//! Node and leaf digests. SHA-256 with a one-byte domain tag so a leaf
//! encoding can never be mistaken for an internal node.

use sha2::{Digest as _, Sha256};

use super::LeafRecord;

pub type Digest = [u8; 32];

pub const LEAF_TAG: u8 = 0x00;
pub const NODE_TAG: u8 = 0x01;

/// `tag ‖ leaf_index ‖ occupied ‖ present ‖ frame`, little endian. Vacant
/// slots encode every field (index included) as zero so that all empty
/// subtrees of the same shape share one digest.
pub fn leaf_digest(leaf_index: u32, record: &LeafRecord) -> Digest {
    let index = if record.occupied { leaf_index } else { 0 };
    let mut h = Sha256::new();
    h.update([LEAF_TAG]);
    h.update(index.to_le_bytes());
    h.update([record.occupied as u8, record.present as u8]);
    h.update(record.frame.to_le_bytes());
    h.finalize().into()
}

/// `tag ‖ depth ‖ child_0 ‖ … ‖ child_k`.
pub fn node_digest<'a>(depth: u8, children: impl IntoIterator<Item = &'a Digest>) -> Digest {
    let mut h = Sha256::new();
    h.update([NODE_TAG, depth]);
    for c in children {
        h.update(c);
    }
    h.finalize().into()
}
