//! The translating MMU with the integrity check wired in front of the OS.
//!
//! On a TLB miss the walker runs as usual. A leaf that exists but is marked
//! not-present is treated as suspicious: before any fault reaches the OS the
//! MMU checks the page's record in the integrity forest. If the record says
//! the page is resident (or the tree itself was tampered with), the present
//! bit is repaired in place and the access completes without the OS ever
//! seeing a fault. First-touch faults register the page (pre-addition) and
//! the retried access that succeeds commits its record (formal addition).

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostModel;
use crate::ddforest::{leaf_index_of, DefenseForest, ForestError, LeafAction, TreeId, VerifyOutcome};
use crate::os_sim::{OsError, OsKernel, Resolution};
use crate::paging::{Level, PageTable, PagingError, PhysAddr, TableAddr, VirtAddr, Vpn, WalkOutcome};
use crate::tlb::Tlb;

#[derive(Debug, Error)]
pub enum MmuError {
    #[error("integrity forest protocol violation: {0}")]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Paging(#[from] PagingError),
    #[error(transparent)]
    Os(#[from] OsError),
    #[error("simulation halted at {va}: {reason}")]
    Halt { va: VirtAddr, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    TlbHit,
    TlbMiss,
    WalkTranslated,
    SuspiciousNotPresent,
    VerifyPass,
    VerifyNoRecord,
    AttackDetected,
    RestoredBypassOs,
    FaultForwardedToOs,
    FormalAdded,
    PreAdded,
    LeafRemoved,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::TlbHit => "TlbHit",
            EventKind::TlbMiss => "TlbMiss",
            EventKind::WalkTranslated => "WalkTranslated",
            EventKind::SuspiciousNotPresent => "SuspiciousNotPresent",
            EventKind::VerifyPass => "VerifyPass",
            EventKind::VerifyNoRecord => "VerifyNoRecord",
            EventKind::AttackDetected => "AttackDetected",
            EventKind::RestoredBypassOs => "RestoredBypassOs",
            EventKind::FaultForwardedToOs => "FaultForwardedToOs",
            EventKind::FormalAdded => "FormalAdded",
            EventKind::PreAdded => "PreAdded",
            EventKind::LeafRemoved => "LeafRemoved",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TranslationEvent {
    pub tick: u64,
    pub kind: EventKind,
    pub va: VirtAddr,
    pub level: Option<Level>,
}

/// One line of the exported event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLine {
    pub tick: u64,
    pub kind: EventKind,
    pub va_hex: String,
    pub level: Option<u8>,
}

impl From<&TranslationEvent> for EventLine {
    fn from(e: &TranslationEvent) -> Self {
        EventLine { tick: e.tick, kind: e.kind, va_hex: format!("{:#x}", e.va.raw()), level: e.level.map(Level::number) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessResult {
    Ok(PhysAddr),
    NeedsOsFault(VirtAddr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessOutcome {
    pub result: AccessResult,
    pub events: Vec<TranslationEvent>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmuCounters {
    pub ticks: u64,
    /// Ticks spent on forest lookups, hashing and in-place repair.
    pub defense_ticks: u64,
    pub hash_ops: u64,
    pub verifications: u64,
}

#[derive(Debug, Clone)]
pub struct MmuContext {
    cr3: TableAddr,
    tlb: Tlb,
    forest: Option<DefenseForest>,
    cost: CostModel,
    counters: MmuCounters,
    events: Vec<TranslationEvent>,
    // Pre-added pages waiting for a successful retry. `None` means the PUD
    // entry did not exist yet at fault time, so the tree is resolved later.
    awaiting: BTreeMap<Vpn, Option<(TreeId, u32)>>,
}

impl MmuContext {
    /// `forest: None` runs an unmodified MMU.
    pub fn new(cr3: TableAddr, tlb: Tlb, cost: CostModel, forest: Option<DefenseForest>) -> Self {
        MmuContext { cr3, tlb, forest, cost, counters: MmuCounters::default(), events: Vec::new(), awaiting: BTreeMap::new() }
    }

    pub fn cr3(&self) -> TableAddr {
        self.cr3
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    pub fn ticks(&self) -> u64 {
        self.counters.ticks
    }

    pub fn counters(&self) -> MmuCounters {
        self.counters
    }

    pub fn events(&self) -> &[TranslationEvent] {
        &self.events
    }

    pub fn tlb(&self) -> &Tlb {
        &self.tlb
    }

    pub fn forest(&self) -> Option<&DefenseForest> {
        self.forest.as_ref()
    }

    /// Direct forest access. Tests use it to tamper with tree memory.
    pub fn forest_mut(&mut self) -> Option<&mut DefenseForest> {
        self.forest.as_mut()
    }

    pub fn defense_enabled(&self) -> bool {
        self.forest.is_some()
    }

    /// Advances the shared clock. The OS charges its work here too.
    pub fn charge(&mut self, ticks: u64) {
        self.counters.ticks += ticks;
    }

    fn charge_defense(&mut self, ticks: u64) {
        self.counters.ticks += ticks;
        self.counters.defense_ticks += ticks;
    }

    fn emit(&mut self, kind: EventKind, va: VirtAddr, level: Option<Level>) {
        self.events.push(TranslationEvent { tick: self.counters.ticks, kind, va, level });
    }

    pub fn tlb_invalidate(&mut self, vpn: Vpn) -> usize {
        self.tlb.invalidate(vpn)
    }

    pub fn tlb_invalidate_all(&mut self) -> usize {
        self.tlb.invalidate_all()
    }

    /// TLB refill performed by the fault handler after it fixes a mapping.
    pub fn tlb_fill(&mut self, vpn: Vpn, frame: u64) {
        self.tlb.insert(vpn, frame);
    }

    /// Tree that protects `va`: the physical address of its PUD entry,
    /// found through cr3 → PGD → PUD.
    fn locate_tree(&mut self, pt: &PageTable, va: VirtAddr) -> Option<TreeId> {
        self.charge_defense(2 * self.cost.pt_level_access);
        pt.pud_entry_location(self.cr3, va).map(|loc| TreeId(loc.table.entry_addr(loc.index)))
    }

    pub fn translate(&mut self, pt: &mut PageTable, va: VirtAddr) -> Result<AccessOutcome, MmuError> {
        let first_event = self.events.len();
        let result = self.translate_inner(pt, va)?;
        Ok(AccessOutcome { result, events: self.events[first_event..].to_vec() })
    }

    /// Same as `translate` without copying the access's events out.
    pub fn translate_result(&mut self, pt: &mut PageTable, va: VirtAddr) -> Result<AccessResult, MmuError> {
        self.translate_inner(pt, va)
    }

    fn translate_inner(&mut self, pt: &mut PageTable, va: VirtAddr) -> Result<AccessResult, MmuError> {
        let vpn = va.vpn();
        self.charge(self.cost.tlb_hit);
        if let Some(frame) = self.tlb.lookup(vpn) {
            self.emit(EventKind::TlbHit, va, None);
            return self.complete(pt, va, frame);
        }
        self.emit(EventKind::TlbMiss, va, None);

        let walk = pt.walk(self.cr3, va);
        self.charge(walk.entries_read() * self.cost.pt_level_access);
        match walk {
            WalkOutcome::Translated(pa) => {
                self.emit(EventKind::WalkTranslated, va, None);
                self.tlb.insert(vpn, pa.frame);
                self.complete(pt, va, pa.frame)
            }
            WalkOutcome::NotMapped { level } => {
                if self.forest.is_some() {
                    self.pre_add(pt, va)?;
                }
                self.emit(EventKind::FaultForwardedToOs, va, Some(level));
                Ok(AccessResult::NeedsOsFault(va))
            }
            WalkOutcome::NotPresent { level: Level::Pt, location } if self.forest.is_some() => {
                let entry = pt.entry_at(location).expect("walker reported a populated slot");
                if !entry.is_user {
                    self.emit(EventKind::FaultForwardedToOs, va, Some(Level::Pt));
                    return Ok(AccessResult::NeedsOsFault(va));
                }
                self.check_suspicious(pt, va, entry.frame)
            }
            WalkOutcome::NotPresent { level, .. } => {
                self.emit(EventKind::FaultForwardedToOs, va, Some(level));
                Ok(AccessResult::NeedsOsFault(va))
            }
        }
    }

    fn pre_add(&mut self, pt: &PageTable, va: VirtAddr) -> Result<(), MmuError> {
        let leaf = leaf_index_of(&va.split());
        let slot = match self.locate_tree(pt, va) {
            Some(tree) => {
                self.forest.as_mut().expect("defense enabled").pre_add(tree, leaf)?;
                Some((tree, leaf))
            }
            None => None,
        };
        self.awaiting.insert(va.vpn(), slot);
        self.emit(EventKind::PreAdded, va, None);
        Ok(())
    }

    /// Successful translation: commit a pending record, then the data access.
    fn complete(&mut self, pt: &PageTable, va: VirtAddr, frame: u64) -> Result<AccessResult, MmuError> {
        if let Some(slot) = self.awaiting.remove(&va.vpn()) {
            self.formal_add(pt, va, frame, slot)?;
        }
        self.charge(self.cost.mem_access);
        Ok(AccessResult::Ok(PhysAddr { frame, offset: va.page_offset() as u16 }))
    }

    fn formal_add(&mut self, pt: &PageTable, va: VirtAddr, frame: u64, slot: Option<(TreeId, u32)>) -> Result<(), MmuError> {
        let (tree, leaf) = match slot {
            Some(s) => s,
            None => {
                let tree = self.locate_tree(pt, va).ok_or_else(|| MmuError::Halt {
                    va,
                    reason: "translated page has no PUD entry".into(),
                })?;
                let leaf = leaf_index_of(&va.split());
                self.forest.as_mut().expect("defense enabled").pre_add(tree, leaf)?;
                (tree, leaf)
            }
        };
        self.charge_defense(self.cost.pt_level_access);
        let user = pt.leaf_entry(self.cr3, va).is_some_and(|e| e.is_user);
        let forest = self.forest.as_mut().expect("defense enabled");
        if !user {
            forest.cancel_pending(tree, leaf);
            return Ok(());
        }
        let ops = forest.formal_add(tree, leaf, true, frame)?;
        self.counters.hash_ops += ops as u64;
        self.charge_defense(ops as u64 * self.cost.hash_node);
        self.emit(EventKind::FormalAdded, va, None);
        Ok(())
    }

    fn check_suspicious(&mut self, pt: &mut PageTable, va: VirtAddr, pte_frame: u64) -> Result<AccessResult, MmuError> {
        self.emit(EventKind::SuspiciousNotPresent, va, Some(Level::Pt));
        let tree = self.locate_tree(pt, va).expect("walk reached the leaf, so the PUD entry exists");
        let leaf = leaf_index_of(&va.split());
        let forest = self.forest.as_ref().expect("defense enabled");
        let check = forest.verify_leaf(tree, leaf);
        let recorded = forest.tree(tree).map(|t| t.record(leaf));
        self.counters.hash_ops += check.hash_ops as u64;
        self.counters.verifications += 1;
        self.charge_defense(check.hash_ops as u64 * self.cost.hash_node);

        let restore_frame = match check.outcome {
            VerifyOutcome::TamperDetected => {
                Some(recorded.filter(|r| r.occupied && r.present).map_or(pte_frame, |r| r.frame))
            }
            // the entry says not-present, the authenticated record says resident
            VerifyOutcome::AuthenticRecord(r) if r.present => Some(r.frame),
            VerifyOutcome::AuthenticRecord(_) => {
                self.emit(EventKind::VerifyPass, va, Some(Level::Pt));
                None
            }
            VerifyOutcome::NoRecord => {
                self.emit(EventKind::VerifyNoRecord, va, Some(Level::Pt));
                // never registered: treat like a first fault so the retry commits it
                self.forest.as_mut().expect("defense enabled").pre_add(tree, leaf)?;
                self.awaiting.insert(va.vpn(), Some((tree, leaf)));
                self.emit(EventKind::PreAdded, va, None);
                None
            }
        };
        let Some(frame) = restore_frame else {
            self.emit(EventKind::FaultForwardedToOs, va, Some(Level::Pt));
            return Ok(AccessResult::NeedsOsFault(va));
        };

        self.emit(EventKind::AttackDetected, va, Some(Level::Pt));
        pt.set_present_bit(self.cr3, va, true)?;
        if pte_frame != frame {
            pt.set_leaf_frame(self.cr3, va, frame)?;
        }
        self.charge_defense(self.cost.pt_level_access);
        self.tlb.insert(va.vpn(), frame);
        self.emit(EventKind::RestoredBypassOs, va, Some(Level::Pt));
        self.charge(self.cost.mem_access);
        Ok(AccessResult::Ok(PhysAddr { frame, offset: va.page_offset() as u16 }))
    }

    /// Hands the fault to the OS, then retries the access once.
    pub fn resolve_and_retry(&mut self, os: &mut OsKernel, va: VirtAddr) -> Result<PhysAddr, MmuError> {
        let record = os.handle_page_fault(self, va)?;
        if record.resolution == Resolution::Segfault {
            return Err(MmuError::Halt { va, reason: "access outside the application's address space".into() });
        }
        match self.translate_inner(os.page_table_mut(), va)? {
            AccessResult::Ok(pa) => Ok(pa),
            AccessResult::NeedsOsFault(_) => Err(MmuError::Halt {
                va,
                reason: format!("retry still faults after {:?}", record.resolution),
            }),
        }
    }

    /// Trusted notification that the OS is evicting `va`: drop its record
    /// and any pending registration, and shoot down the TLB entry. Must run
    /// before the leaf entry is unmapped.
    pub fn on_swap_out(&mut self, pt: &PageTable, va: VirtAddr) -> Result<(), MmuError> {
        self.tlb.invalidate(va.vpn());
        self.awaiting.remove(&va.vpn());
        if self.forest.is_none() {
            return Ok(());
        }
        let Some(tree) = self.locate_tree(pt, va) else {
            return Ok(());
        };
        let leaf = leaf_index_of(&va.split());
        let forest = self.forest.as_mut().expect("defense enabled");
        forest.cancel_pending(tree, leaf);
        if forest.tree(tree).is_some_and(|t| t.record(leaf).occupied) {
            let ops = forest.update_or_remove_leaf(tree, leaf, LeafAction::Remove)?;
            self.counters.hash_ops += ops as u64;
            self.charge_defense(ops as u64 * self.cost.hash_node);
            self.emit(EventKind::LeafRemoved, va, None);
        }
        Ok(())
    }

    pub fn write_events_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, &EventLine::from(e))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddforest::Arity;
    use crate::harness::Machine;
    use crate::workloads::{Access, Op};

    const A: u64 = 0x4000_1000;

    fn machine(defense: bool, frames: u64) -> Machine {
        let forest = defense.then(|| DefenseForest::new(Arity::default()));
        let mut m = Machine::new(frames, 8, CostModel::default(), forest).unwrap();
        m.os.register_pages((0..64).map(|i| Vpn(0x40000 + i)).chain([Vpn(0x80000), Vpn(0x80001)]));
        m
    }

    fn touch(m: &mut Machine, va: u64) -> PhysAddr {
        m.access(Access { va: VirtAddr::new(va).unwrap(), op: Op::Read }).unwrap()
    }

    fn kinds(events: &[TranslationEvent]) -> Vec<EventKind> {
        events.iter().map(|e| e.kind).collect()
    }

    /// Simulates the attacker's edit without going through the kernel.
    fn clear_present(m: &mut Machine, va: u64) {
        let va = VirtAddr::new(va).unwrap();
        m.os.page_table_mut().set_present_bit(m.mmu.cr3(), va, false).unwrap();
        m.mmu.tlb_invalidate(va.vpn());
    }

    fn tree_of(m: &Machine, va: u64) -> TreeId {
        let loc = m.os.page_table().pud_entry_location(m.mmu.cr3(), VirtAddr::new(va).unwrap()).unwrap();
        TreeId(loc.table.entry_addr(loc.index))
    }

    #[test]
    fn first_touch_pre_adds_then_formal_adds_once() {
        let mut m = machine(true, 16);
        touch(&mut m, A);
        assert_eq!(
            kinds(m.mmu.events()),
            vec![EventKind::TlbMiss, EventKind::PreAdded, EventKind::FaultForwardedToOs, EventKind::TlbHit, EventKind::FormalAdded]
        );
        assert_eq!(m.mmu.events()[2].level, Some(Level::Pgd));
        touch(&mut m, A + 8);
        assert_eq!(kinds(m.mmu.events()).iter().filter(|k| **k == EventKind::FormalAdded).count(), 1);
        let tree = tree_of(&m, A);
        let leaf = leaf_index_of(&VirtAddr::new(A).unwrap().split());
        let rec = m.mmu.forest().unwrap().tree(tree).unwrap().record(leaf);
        assert!(rec.occupied && rec.present);
        assert!(m.mmu.forest().unwrap().pending().is_empty());
    }

    #[test]
    fn cleared_bit_is_restored_without_the_os() {
        let mut m = machine(true, 16);
        let pa = touch(&mut m, A);
        let faults = m.os.fault_log().len();
        clear_present(&mut m, A);
        let before = m.mmu.counters();
        let out = m.mmu.translate(m.os.page_table_mut(), VirtAddr::new(A).unwrap()).unwrap();
        assert_eq!(out.result, AccessResult::Ok(pa));
        assert_eq!(
            kinds(&out.events),
            vec![EventKind::TlbMiss, EventKind::SuspiciousNotPresent, EventKind::AttackDetected, EventKind::RestoredBypassOs]
        );
        assert_eq!(m.os.fault_log().len(), faults);
        assert!(m.os.page_table().leaf_entry(m.mmu.cr3(), VirtAddr::new(A).unwrap()).unwrap().present);
        let after = m.mmu.counters();
        assert_eq!(after.hash_ops - before.hash_ops, 6);
        assert_eq!(after.verifications - before.verifications, 1);
        assert!(m.mmu.tlb().peek(Vpn(A >> 12)).is_some());
    }

    #[test]
    fn substituted_frame_is_put_back() {
        let mut m = machine(true, 16);
        let pa = touch(&mut m, A);
        let va = VirtAddr::new(A).unwrap();
        m.os.page_table_mut().set_leaf_frame(m.mmu.cr3(), va, pa.frame + 7).unwrap();
        clear_present(&mut m, A);
        assert_eq!(touch(&mut m, A).frame, pa.frame);
        assert_eq!(m.os.page_table().leaf_entry(m.mmu.cr3(), va).unwrap().frame, pa.frame);
    }

    #[test]
    fn tampered_tree_still_triggers_restore() {
        let mut m = machine(true, 16);
        let pa = touch(&mut m, A);
        let tree = tree_of(&m, A);
        let leaf = leaf_index_of(&VirtAddr::new(A).unwrap().split());
        m.mmu.forest_mut().unwrap().untrusted_tree_mut(tree).unwrap().corrupt_leaf_bit(leaf, 1);
        clear_present(&mut m, A);
        assert_eq!(touch(&mut m, A), pa);
        assert!(kinds(m.mmu.events()).contains(&EventKind::AttackDetected));
        assert_eq!(m.os.fault_log().len(), 1);
    }

    #[test]
    fn authentic_not_present_record_goes_to_os() {
        let mut m = machine(true, 16);
        let pa = touch(&mut m, A);
        let tree = tree_of(&m, A);
        let leaf = leaf_index_of(&VirtAddr::new(A).unwrap().split());
        m.mmu
            .forest_mut()
            .unwrap()
            .update_or_remove_leaf(tree, leaf, LeafAction::Update { present: false, frame: pa.frame })
            .unwrap();
        clear_present(&mut m, A);
        let out = m.mmu.translate(m.os.page_table_mut(), VirtAddr::new(A).unwrap()).unwrap();
        assert!(matches!(out.result, AccessResult::NeedsOsFault(_)));
        assert_eq!(&kinds(&out.events)[1..], &[EventKind::SuspiciousNotPresent, EventKind::VerifyPass, EventKind::FaultForwardedToOs]);
    }

    #[test]
    fn kernel_pages_skip_verification() {
        let mut m = machine(true, 16);
        let va = VirtAddr::new(0x4000_3000).unwrap();
        let cr3 = m.mmu.cr3();
        m.os.page_table_mut().map_page(cr3, va, 3, false).unwrap();
        m.os.page_table_mut().set_present_bit(cr3, va, false).unwrap();
        let out = m.mmu.translate(m.os.page_table_mut(), va).unwrap();
        assert_eq!(kinds(&out.events), vec![EventKind::TlbMiss, EventKind::FaultForwardedToOs]);
        assert_eq!(m.mmu.counters().verifications, 0);
    }

    #[test]
    fn legitimate_swap_out_is_not_an_attack() {
        let mut m = machine(true, 1);
        touch(&mut m, A);
        touch(&mut m, A + 0x1000);
        touch(&mut m, A);
        let k = kinds(m.mmu.events());
        assert!(!k.contains(&EventKind::AttackDetected));
        assert_eq!(k.iter().filter(|e| **e == EventKind::LeafRemoved).count(), 2);
        assert_eq!(k.iter().filter(|e| **e == EventKind::FormalAdded).count(), 3);
        assert_eq!(m.os.fault_log().len(), 3);
    }

    #[test]
    fn one_tree_per_pud_entry() {
        let mut m = machine(true, 16);
        touch(&mut m, A);
        touch(&mut m, A + 0x1000);
        assert_eq!(m.mmu.forest().unwrap().tree_count(), 1);
        touch(&mut m, 0x8000_0000);
        assert_eq!(m.mmu.forest().unwrap().tree_count(), 2);
        assert_ne!(tree_of(&m, A), tree_of(&m, 0x8000_0000));
    }

    #[test]
    fn undefended_mmu_forwards_everything() {
        let mut m = machine(false, 16);
        touch(&mut m, A);
        clear_present(&mut m, A);
        let out = m.mmu.translate(m.os.page_table_mut(), VirtAddr::new(A).unwrap()).unwrap();
        assert!(matches!(out.result, AccessResult::NeedsOsFault(_)));
        assert_eq!(m.mmu.counters().defense_ticks, 0);
        assert!(!kinds(m.mmu.events()).contains(&EventKind::PreAdded));
    }

    #[test]
    fn outside_address_space_halts() {
        let mut m = machine(true, 16);
        let err = m.access(Access { va: VirtAddr::new(0x1234_5000).unwrap(), op: Op::Read }).unwrap_err();
        assert!(err.to_string().contains("halted"));
    }

    #[test]
    fn event_log_exports_as_jsonl() {
        let mut m = machine(true, 16);
        touch(&mut m, A);
        let mut buf = Vec::new();
        m.mmu.write_events_jsonl(&mut buf).unwrap();
        let lines: Vec<EventLine> = String::from_utf8(buf).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0].va_hex, "0x40001000");
        assert_eq!(lines[2].level, Some(4));
    }

    /// Every suspicious walk resolves along exactly one of the legal paths,
    /// and every formal addition follows a pre-addition of the same page.
    #[test]
    fn event_sequences_follow_the_protocol() {
        use crate::harness::{run_scenario_detailed, Mode, ScenarioConfig};
        use crate::workloads::WorkloadKind;
        let mut c = ScenarioConfig::new(Mode::AttackWithDefense, WorkloadKind::BTree(2000), 3);
        c.unwarmed_frac = 0.2;
        c.frame_capacity = 12;
        let run = run_scenario_detailed(&c).unwrap();
        let ev = run.machine.mmu.events();
        let mut pending = std::collections::BTreeSet::new();
        let mut i = 0;
        while i < ev.len() {
            match ev[i].kind {
                EventKind::SuspiciousNotPresent => {
                    let next: Vec<EventKind> = ev[i + 1..].iter().take(3).map(|e| e.kind).collect();
                    let legal: [&[EventKind]; 3] = [
                        &[EventKind::AttackDetected, EventKind::RestoredBypassOs],
                        &[EventKind::VerifyPass, EventKind::FaultForwardedToOs],
                        &[EventKind::VerifyNoRecord, EventKind::PreAdded, EventKind::FaultForwardedToOs],
                    ];
                    let path = legal.iter().find(|p| next.starts_with(p));
                    let path = path.unwrap_or_else(|| panic!("bad sequence after suspicious walk: {next:?}"));
                    assert!(ev[i + 1..=i + path.len()].iter().all(|e| e.va == ev[i].va));
                }
                EventKind::PreAdded => {
                    pending.insert(ev[i].va.vpn());
                }
                EventKind::FormalAdded => assert!(pending.remove(&ev[i].va.vpn()), "formal add without pre-add"),
                _ => {}
            }
            i += 1;
        }
        assert!(ev.windows(2).all(|w| w[0].tick <= w[1].tick));
        assert!(run.report.event(EventKind::LeafRemoved) > 0);
    }
}
