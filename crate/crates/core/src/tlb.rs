//! Fully associative translation cache with LRU replacement.

use std::collections::{BTreeMap, HashMap};

use crate::paging::Vpn;

pub const DEFAULT_TLB_CAPACITY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TlbEntry {
    pub vpn: Vpn,
    pub frame: u64,
    pub lru_stamp: u64,
}

#[derive(Debug, Clone)]
pub struct Tlb {
    capacity: usize,
    entries: HashMap<Vpn, TlbEntry>,
    // stamp -> vpn; the smallest stamp is the LRU victim
    recency: BTreeMap<u64, Vpn>,
    clock: u64,
}

impl Default for Tlb {
    fn default() -> Self {
        Tlb::new(DEFAULT_TLB_CAPACITY)
    }
}

impl Tlb {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "TLB capacity must be positive");
        Tlb { capacity, entries: HashMap::with_capacity(capacity), recency: BTreeMap::new(), clock: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Returns the cached frame and refreshes the entry's recency on a hit.
    pub fn lookup(&mut self, vpn: Vpn) -> Option<u64> {
        if !self.entries.contains_key(&vpn) {
            return None;
        }
        let stamp = self.tick();
        let e = self.entries.get_mut(&vpn).expect("checked above");
        self.recency.remove(&e.lru_stamp);
        e.lru_stamp = stamp;
        self.recency.insert(stamp, vpn);
        Some(e.frame)
    }

    /// Like `lookup` but without touching recency.
    pub fn peek(&self, vpn: Vpn) -> Option<TlbEntry> {
        self.entries.get(&vpn).copied()
    }

    /// Inserts or refreshes a translation; returns the evicted vpn, if any.
    pub fn insert(&mut self, vpn: Vpn, frame: u64) -> Option<Vpn> {
        let stamp = self.tick();
        if let Some(e) = self.entries.get_mut(&vpn) {
            self.recency.remove(&e.lru_stamp);
            e.frame = frame;
            e.lru_stamp = stamp;
            self.recency.insert(stamp, vpn);
            return None;
        }
        let evicted = if self.entries.len() == self.capacity {
            let (_, victim) = self.recency.pop_first().expect("full TLB has a victim");
            self.entries.remove(&victim);
            Some(victim)
        } else {
            None
        };
        self.entries.insert(vpn, TlbEntry { vpn, frame, lru_stamp: stamp });
        self.recency.insert(stamp, vpn);
        evicted
    }

    pub fn invalidate(&mut self, vpn: Vpn) -> usize {
        match self.entries.remove(&vpn) {
            Some(e) => {
                self.recency.remove(&e.lru_stamp);
                1
            }
            None => 0,
        }
    }

    pub fn invalidate_all(&mut self) -> usize {
        let n = self.entries.len();
        self.entries.clear();
        self.recency.clear();
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_lookup_misses() {
        let mut t = Tlb::default();
        assert_eq!(t.lookup(Vpn(1)), None);
        assert_eq!(t.invalidate_all(), 0);
    }

    #[test]
    fn insert_then_lookup() {
        let mut t = Tlb::new(4);
        assert_eq!(t.insert(Vpn(7), 70), None);
        assert_eq!(t.lookup(Vpn(7)), Some(70));
        assert_eq!(t.insert(Vpn(7), 71), None);
        assert_eq!(t.len(), 1);
        assert_eq!(t.lookup(Vpn(7)), Some(71));
    }

    #[test]
    fn evicts_least_recently_used() {
        let cap = 8;
        let mut t = Tlb::new(cap);
        for v in 0..cap as u64 {
            t.insert(Vpn(v), v);
        }
        // touch 0 so 1 becomes the oldest
        t.lookup(Vpn(0));
        assert_eq!(t.insert(Vpn(100), 100), Some(Vpn(1)));
        assert_eq!(t.lookup(Vpn(1)), None);
        assert_eq!(t.lookup(Vpn(0)), Some(0));
        assert_eq!(t.len(), cap);
    }

    #[test]
    fn overfill_evicts_exactly_oldest() {
        let mut t = Tlb::new(3);
        let evictions: Vec<_> = (0..4u64).filter_map(|v| t.insert(Vpn(v), v)).collect();
        assert_eq!(evictions, vec![Vpn(0)]);
    }

    #[test]
    fn invalidation() {
        let mut t = Tlb::new(16);
        t.insert(Vpn(1), 1);
        assert_eq!(t.invalidate(Vpn(1)), 1);
        assert_eq!(t.lookup(Vpn(1)), None);
        assert_eq!(t.invalidate(Vpn(1)), 0);
        for v in 0..5 {
            t.insert(Vpn(v), v);
        }
        assert_eq!(t.invalidate_all(), 5);
        assert!(t.is_empty());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Lookup(u64),
        Insert(u64, u64),
        Invalidate(u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u64..12).prop_map(Op::Lookup),
            (0u64..12, 0u64..100).prop_map(|(v, f)| Op::Insert(v, f)),
            (0u64..12).prop_map(Op::Invalidate),
        ]
    }

    proptest! {
        // Reference model: a vector ordered from least to most recent.
        #[test]
        fn matches_lru_replay(ops in prop::collection::vec(op(), 0..200), cap in 1usize..6) {
            let mut t = Tlb::new(cap);
            let mut model: Vec<(u64, u64)> = Vec::new();
            for o in ops {
                match o {
                    Op::Lookup(v) => {
                        let pos = model.iter().position(|e| e.0 == v);
                        let expect = pos.map(|p| { let e = model.remove(p); model.push(e); e.1 });
                        prop_assert_eq!(t.lookup(Vpn(v)), expect);
                    }
                    Op::Insert(v, f) => {
                        let mut expect = None;
                        if let Some(p) = model.iter().position(|e| e.0 == v) {
                            model.remove(p);
                        } else if model.len() == cap {
                            expect = Some(Vpn(model.remove(0).0));
                        }
                        model.push((v, f));
                        prop_assert_eq!(t.insert(Vpn(v), f), expect);
                    }
                    Op::Invalidate(v) => {
                        let pos = model.iter().position(|e| e.0 == v);
                        if let Some(p) = pos { model.remove(p); }
                        prop_assert_eq!(t.invalidate(Vpn(v)), pos.is_some() as usize);
                    }
                }
                prop_assert!(t.len() <= cap);
                prop_assert_eq!(t.len(), model.len());
            }
        }
    }
}
