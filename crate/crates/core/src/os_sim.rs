//! Simulated kernel: demand paging with LRU reclamation, plus the
//! malicious fault handler that clears present bits and logs which pages
//! fault.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mmu::{MmuContext, MmuError};
use crate::paging::{PageTable, PagingError, PhysAddr, TableAddr, VirtAddr, Vpn, PAGE_SIZE};

#[derive(Debug, Error)]
pub enum OsError {
    #[error("frame capacity must be at least 1")]
    NoFrames,
    #[error("out of frames and nothing resident to reclaim")]
    NothingResident,
    #[error("attack target {0} is not mapped")]
    UnmappedTarget(Vpn),
    #[error(transparent)]
    Paging(#[from] PagingError),
    #[error("trusted eviction path failed: {0}")]
    Mmu(Box<MmuError>),
}

impl From<MmuError> for OsError {
    fn from(e: MmuError) -> Self {
        OsError::Mmu(Box::new(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HandlerMode {
    Benign,
    AttackerInstalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resolution {
    LoadedNew,
    SwappedIn,
    /// The attacker logged the fault and set the present bit again.
    AttackRestored,
    /// Entry was resident; the handler only fixed the present bit.
    Revalidated,
    /// The address is not part of the application.
    Segfault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub tick: u64,
    pub va: VirtAddr,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoCounters {
    pub backing_writes: u64,
    pub backing_reads: u64,
}

/// State of the controlled-channel attacker living inside the OS.
#[derive(Debug, Clone, Default)]
pub struct AttackController {
    targets: BTreeSet<Vpn>,
    trace: Vec<(u64, Vpn)>,
    swap_mode: bool,
    rearm: bool,
    // present bit currently cleared by us
    armed: BTreeSet<Vpn>,
    // data moved out to the backing store by a swapping arm
    moved_out: BTreeSet<Vpn>,
}

impl AttackController {
    pub fn targets(&self) -> &BTreeSet<Vpn> {
        &self.targets
    }

    pub fn swap_mode(&self) -> bool {
        self.swap_mode
    }

    pub fn leakage_report(&self) -> &[(u64, Vpn)] {
        &self.trace
    }

    pub fn leaked_pages(&self) -> BTreeSet<Vpn> {
        self.trace.iter().map(|(_, v)| *v).collect()
    }

    /// `tick,vpn_hex` with a header line.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tick", "vpn_hex"])?;
        for (tick, vpn) in &self.trace {
            w.write_record([tick.to_string(), format!("{:#x}", vpn.0)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Resident {
    frame: u64,
    stamp: u64,
}

#[derive(Debug, Clone)]
pub struct OsKernel {
    page_table: PageTable,
    cr3: TableAddr,
    frame_capacity: u64,
    free: BTreeSet<u64>,
    memory: HashMap<u64, Vec<u8>>,
    address_space: BTreeSet<Vpn>,
    backing: HashMap<Vpn, Vec<u8>>,
    resident: HashMap<Vpn, Resident>,
    lru: BTreeMap<u64, Vpn>,
    clock: u64,
    mode: HandlerMode,
    attacker: AttackController,
    faults: Vec<FaultRecord>,
    io: IoCounters,
}

impl OsKernel {
    pub fn new(frame_capacity: u64) -> Result<Self, OsError> {
        if frame_capacity == 0 {
            return Err(OsError::NoFrames);
        }
        let page_table = PageTable::new();
        let cr3 = page_table.cr3();
        Ok(OsKernel {
            page_table,
            cr3,
            frame_capacity,
            free: (0..frame_capacity).collect(),
            memory: HashMap::new(),
            address_space: BTreeSet::new(),
            backing: HashMap::new(),
            resident: HashMap::new(),
            lru: BTreeMap::new(),
            clock: 0,
            mode: HandlerMode::Benign,
            attacker: AttackController { rearm: true, ..Default::default() },
            faults: Vec::new(),
            io: IoCounters::default(),
        })
    }

    pub fn cr3(&self) -> TableAddr {
        self.cr3
    }

    pub fn page_table(&self) -> &PageTable {
        &self.page_table
    }

    pub fn page_table_mut(&mut self) -> &mut PageTable {
        &mut self.page_table
    }

    pub fn frame_capacity(&self) -> u64 {
        self.frame_capacity
    }

    pub fn free_frames(&self) -> usize {
        self.free.len()
    }

    pub fn resident_pages(&self) -> usize {
        self.resident.len()
    }

    pub fn mode(&self) -> HandlerMode {
        self.mode
    }

    pub fn attacker(&self) -> &AttackController {
        &self.attacker
    }

    /// Whether the attacker clears a target again each time it finds it present.
    pub fn set_rearm(&mut self, rearm: bool) {
        self.attacker.rearm = rearm;
    }

    pub fn leakage_report(&self) -> &[(u64, Vpn)] {
        self.attacker.leakage_report()
    }

    pub fn fault_log(&self) -> &[FaultRecord] {
        &self.faults
    }

    pub fn io(&self) -> IoCounters {
        self.io
    }

    /// Declares pages that belong to the application; faults elsewhere segfault.
    pub fn register_pages(&mut self, pages: impl IntoIterator<Item = Vpn>) {
        self.address_space.extend(pages);
    }

    pub fn is_resident(&self, vpn: Vpn) -> bool {
        self.resident.contains_key(&vpn)
    }

    pub fn read_byte(&self, pa: PhysAddr) -> u8 {
        self.memory.get(&pa.frame).map_or(0, |m| m[pa.offset as usize])
    }

    pub fn write_byte(&mut self, pa: PhysAddr, value: u8) {
        let page = self.memory.entry(pa.frame).or_insert_with(|| vec![0; PAGE_SIZE as usize]);
        page[pa.offset as usize] = value;
    }

    fn touch(&mut self, vpn: Vpn) {
        self.clock += 1;
        if let Some(r) = self.resident.get_mut(&vpn) {
            self.lru.remove(&r.stamp);
            r.stamp = self.clock;
            self.lru.insert(self.clock, vpn);
        }
    }

    /// Records a completed access for LRU purposes.
    pub fn note_access(&mut self, vpn: Vpn) {
        self.touch(vpn);
    }

    fn alloc_frame(&mut self, mmu: &mut MmuContext) -> Result<u64, OsError> {
        if self.free.is_empty() {
            self.swap_out_victim(mmu)?;
        }
        Ok(self.free.pop_first().expect("reclaim freed a frame"))
    }

    /// Brings a page in and maps it. Returns the frame and whether the
    /// contents came from the backing store.
    fn load_page(&mut self, mmu: &mut MmuContext, va: VirtAddr) -> Result<(u64, bool), OsError> {
        let vpn = va.vpn();
        let frame = self.alloc_frame(mmu)?;
        let swapped_in = match self.backing.remove(&vpn) {
            Some(data) => {
                self.io.backing_reads += 1;
                mmu.charge(mmu.cost().swap_io);
                self.memory.insert(frame, data);
                true
            }
            None => {
                self.memory.remove(&frame);
                false
            }
        };
        self.page_table.map_page(self.cr3, va.page_base(), frame, true)?;
        self.clock += 1;
        self.resident.insert(vpn, Resident { frame, stamp: self.clock });
        self.lru.insert(self.clock, vpn);
        Ok((frame, swapped_in))
    }

    /// Maps a page directly, as a loader would at startup. No fault is
    /// taken, so the MMU never sees a first access for it.
    pub fn preload(&mut self, mmu: &mut MmuContext, va: VirtAddr) -> Result<u64, OsError> {
        if let Some(r) = self.resident.get(&va.vpn()) {
            return Ok(r.frame);
        }
        Ok(self.load_page(mmu, va)?.0)
    }

    pub fn handle_page_fault(&mut self, mmu: &mut MmuContext, va: VirtAddr) -> Result<FaultRecord, OsError> {
        mmu.charge(mmu.cost().os_fault);
        let vpn = va.vpn();
        let entry = self.page_table.leaf_entry(self.cr3, va);
        let resolution = match entry {
            Some(e) if !e.present && self.mode == HandlerMode::AttackerInstalled && self.attacker.targets.contains(&vpn) => {
                self.attacker.trace.push((mmu.ticks(), vpn));
                self.restore_armed(mmu, va)?;
                mmu.tlb_fill(vpn, e.frame);
                Resolution::AttackRestored
            }
            Some(e) => {
                let moved = self.attacker.moved_out.contains(&vpn);
                self.restore_armed(mmu, va)?;
                mmu.tlb_fill(vpn, e.frame);
                if moved { Resolution::SwappedIn } else { Resolution::Revalidated }
            }
            None if !self.address_space.contains(&vpn) => Resolution::Segfault,
            None => {
                let (frame, swapped_in) = self.load_page(mmu, va)?;
                mmu.tlb_fill(vpn, frame);
                if swapped_in { Resolution::SwappedIn } else { Resolution::LoadedNew }
            }
        };
        let record = FaultRecord { tick: mmu.ticks(), va, resolution };
        self.faults.push(record);
        Ok(record)
    }

    /// Undoes an arm: brings moved data back and sets the present bit.
    fn restore_armed(&mut self, mmu: &mut MmuContext, va: VirtAddr) -> Result<(), OsError> {
        let vpn = va.vpn();
        if self.attacker.moved_out.remove(&vpn) {
            if let (Some(data), Some(r)) = (self.backing.remove(&vpn), self.resident.get(&vpn)) {
                self.io.backing_reads += 1;
                mmu.charge(mmu.cost().swap_io);
                self.memory.insert(r.frame, data);
            }
        }
        self.page_table.set_present_bit(self.cr3, va, true)?;
        mmu.charge(mmu.cost().pt_level_access);
        self.attacker.armed.remove(&vpn);
        Ok(())
    }

    /// Evicts the least recently used resident page to the backing store.
    pub fn swap_out_victim(&mut self, mmu: &mut MmuContext) -> Result<Vpn, OsError> {
        let (_, vpn) = self.lru.pop_first().ok_or(OsError::NothingResident)?;
        let r = self.resident.remove(&vpn).expect("lru and resident agree");
        let va = vpn.base();
        mmu.on_swap_out(&self.page_table, va)?;
        let data = self.memory.remove(&r.frame).unwrap_or_else(|| vec![0; PAGE_SIZE as usize]);
        if !self.attacker.moved_out.remove(&vpn) {
            self.backing.insert(vpn, data);
            self.io.backing_writes += 1;
            mmu.charge(mmu.cost().swap_io);
        }
        self.attacker.armed.remove(&vpn);
        self.page_table.unmap_page(self.cr3, va)?;
        self.free.insert(r.frame);
        Ok(vpn)
    }

    fn arm_one(&mut self, mmu: &mut MmuContext, vpn: Vpn) -> Result<(), OsError> {
        let va = vpn.base();
        self.page_table.set_present_bit(self.cr3, va, false)?;
        mmu.charge(mmu.cost().pt_level_access);
        mmu.tlb_invalidate(vpn);
        self.attacker.armed.insert(vpn);
        if self.attacker.swap_mode && !self.attacker.moved_out.contains(&vpn) {
            // full data movement, but the entry stays in the table
            let frame = self.resident[&vpn].frame;
            let data = self.memory.remove(&frame).unwrap_or_else(|| vec![0; PAGE_SIZE as usize]);
            self.backing.insert(vpn, data);
            self.io.backing_writes += 1;
            mmu.charge(mmu.cost().swap_io);
            self.attacker.moved_out.insert(vpn);
        }
        Ok(())
    }

    /// Clears the present bit of every target (never touching the integrity
    /// forest) and installs the logging fault handler.
    pub fn attack_arm(&mut self, mmu: &mut MmuContext, targets: &[Vpn], swap_mode: bool) -> Result<(), OsError> {
        for &vpn in targets {
            if self.page_table.leaf_entry(self.cr3, vpn.base()).is_none() || !self.resident.contains_key(&vpn) {
                return Err(OsError::UnmappedTarget(vpn));
            }
        }
        self.attacker.swap_mode = swap_mode;
        self.mode = HandlerMode::AttackerInstalled;
        for &vpn in targets {
            self.attacker.targets.insert(vpn);
            if !self.attacker.armed.contains(&vpn) {
                self.arm_one(mmu, vpn)?;
            }
        }
        Ok(())
    }

    /// Removes the logging handler and restores every cleared entry.
    pub fn disarm(&mut self, mmu: &mut MmuContext) -> Result<(), OsError> {
        let armed: Vec<Vpn> = self.attacker.armed.iter().copied().collect();
        for vpn in armed {
            self.restore_armed(mmu, vpn.base())?;
        }
        self.attacker.targets.clear();
        self.mode = HandlerMode::Benign;
        Ok(())
    }

    /// Hook run after every completed access: LRU bookkeeping, and the
    /// attacker re-clearing a target it finds present again.
    pub fn after_access(&mut self, mmu: &mut MmuContext, va: VirtAddr) -> Result<(), OsError> {
        let vpn = va.vpn();
        self.touch(vpn);
        if self.mode == HandlerMode::AttackerInstalled
            && self.attacker.rearm
            && self.attacker.targets.contains(&vpn)
            && self.page_table.leaf_entry(self.cr3, va).is_some_and(|e| e.present)
        {
            self.arm_one(mmu, vpn)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostModel;
    use crate::ddforest::{leaf_index_of, Arity, DefenseForest, TreeId, VerifyOutcome};
    use crate::harness::Machine;
    use crate::mmu::EventKind;
    use crate::workloads::{Access, Op};

    fn page(i: u64) -> VirtAddr {
        VirtAddr::new(0x4000_0000 + i * PAGE_SIZE).unwrap()
    }

    fn machine(defense: bool, frames: u64) -> Machine {
        let forest = defense.then(|| DefenseForest::new(Arity::default()));
        let mut m = Machine::new(frames, 8, CostModel::default(), forest).unwrap();
        m.os.register_pages((0..32).map(|i| page(i).vpn()));
        m
    }

    fn touch(m: &mut Machine, i: u64) -> PhysAddr {
        m.access(Access { va: page(i), op: Op::Read }).unwrap()
    }

    fn present(m: &Machine, i: u64) -> bool {
        m.os.page_table().leaf_entry(m.os.cr3(), page(i)).is_some_and(|e| e.present)
    }

    #[test]
    fn zero_frames_is_an_error() {
        assert!(matches!(OsKernel::new(0), Err(OsError::NoFrames)));
    }

    #[test]
    fn benign_first_fault_loads() {
        let mut m = machine(false, 4);
        touch(&mut m, 0);
        assert_eq!(m.os.fault_log().len(), 1);
        assert_eq!(m.os.fault_log()[0].resolution, Resolution::LoadedNew);
        assert!(present(&m, 0));
        assert_eq!(m.os.free_frames(), 3);
    }

    #[test]
    fn attacker_logs_target_faults_only() {
        let mut m = machine(false, 8);
        for i in 0..3 {
            touch(&mut m, i);
        }
        m.os.attack_arm(&mut m.mmu, &[page(1).vpn()], false).unwrap();
        assert!(!present(&m, 1));
        touch(&mut m, 0);
        assert!(m.os.leakage_report().is_empty());
        touch(&mut m, 1);
        assert_eq!(m.os.leakage_report().len(), 1);
        assert_eq!(m.os.leakage_report()[0].1, page(1).vpn());
        assert_eq!(m.os.fault_log().last().unwrap().resolution, Resolution::AttackRestored);
        // re-armed after the access completed
        assert!(!present(&m, 1));
        touch(&mut m, 1);
        assert_eq!(m.os.leakage_report().len(), 2);
        assert_eq!(m.os.attacker().leaked_pages().len(), 1);
    }

    #[test]
    fn without_rearm_one_leak_per_target() {
        let mut m = machine(false, 8);
        m.os.set_rearm(false);
        touch(&mut m, 0);
        m.os.attack_arm(&mut m.mmu, &[page(0).vpn()], false).unwrap();
        for _ in 0..3 {
            touch(&mut m, 0);
        }
        assert_eq!(m.os.leakage_report().len(), 1);
        assert!(present(&m, 0));
    }

    #[test]
    fn reclaims_least_recently_used() {
        let mut m = machine(false, 3);
        for i in [0, 1, 2, 0] {
            touch(&mut m, i);
        }
        touch(&mut m, 3);
        // replay oracle: recency order before the fault was 1, 2, 0
        assert!(!m.os.is_resident(page(1).vpn()));
        for i in [0, 2, 3] {
            assert!(m.os.is_resident(page(i).vpn()));
        }
        assert!(m.os.page_table().leaf_entry(m.os.cr3(), page(1)).is_none());
        assert!(m.mmu.tlb().peek(page(1).vpn()).is_none());
        assert_eq!(m.os.io().backing_writes, 1);
    }

    #[test]
    fn swapped_page_keeps_data_and_is_readded() {
        let mut m = machine(true, 1);
        let pa = m.access(Access { va: VirtAddr::new(page(0).raw() + 5).unwrap(), op: Op::Write }).unwrap();
        let written = m.os.read_byte(pa);
        let tree = {
            let loc = m.os.page_table().pud_entry_location(m.os.cr3(), page(0)).unwrap();
            TreeId(loc.table.entry_addr(loc.index))
        };
        let leaf = leaf_index_of(&page(0).split());
        touch(&mut m, 1);
        assert_eq!(m.mmu.forest().unwrap().verify_leaf(tree, leaf).outcome, VerifyOutcome::NoRecord);
        let formal_before = m.mmu.events().iter().filter(|e| e.kind == EventKind::FormalAdded).count();
        let back = m.access(Access { va: VirtAddr::new(page(0).raw() + 5).unwrap(), op: Op::Read }).unwrap();
        assert_eq!(m.os.fault_log().last().unwrap().resolution, Resolution::SwappedIn);
        assert_eq!(m.os.read_byte(back), written);
        let formal_after = m.mmu.events().iter().filter(|e| e.kind == EventKind::FormalAdded).count();
        assert_eq!(formal_after, formal_before + 1);
        assert!(matches!(m.mmu.forest().unwrap().verify_leaf(tree, leaf).outcome, VerifyOutcome::AuthenticRecord(_)));
    }

    #[test]
    fn arming_leaves_forest_roots_alone() {
        let mut m = machine(true, 8);
        for i in 0..3 {
            touch(&mut m, i);
        }
        let roots: Vec<_> = m.mmu.forest().unwrap().roots().iter().map(|(k, v)| (*k, *v)).collect();
        let targets: Vec<Vpn> = (0..3).map(|i| page(i).vpn()).collect();
        m.os.attack_arm(&mut m.mmu, &targets, false).unwrap();
        let after: Vec<_> = m.mmu.forest().unwrap().roots().iter().map(|(k, v)| (*k, *v)).collect();
        assert_eq!(roots, after);
        assert!((0..3).all(|i| !present(&m, i)));
        assert_eq!(m.os.io().backing_writes, 0);
    }

    #[test]
    fn swap_arm_moves_data_per_target() {
        let mut m = machine(false, 8);
        for i in 0..4 {
            touch(&mut m, i);
        }
        let targets: Vec<Vpn> = (0..3).map(|i| page(i).vpn()).collect();
        m.os.attack_arm(&mut m.mmu, &targets, true).unwrap();
        assert_eq!(m.os.io().backing_writes, 3);
        assert!(m.os.page_table().leaf_entry(m.os.cr3(), page(0)).is_some());
        touch(&mut m, 0);
        assert_eq!(m.os.io().backing_reads, 1);
    }

    #[test]
    fn swap_mode_costs_at_least_the_swap_charge() {
        let run = |swap: bool| {
            let mut m = machine(false, 8);
            for i in 0..4 {
                touch(&mut m, i);
            }
            let start = m.mmu.ticks();
            let targets: Vec<Vpn> = (0..4).map(|i| page(i).vpn()).collect();
            m.os.attack_arm(&mut m.mmu, &targets, swap).unwrap();
            for i in 0..4 {
                touch(&mut m, i);
            }
            m.mmu.ticks() - start
        };
        assert!(run(true) - run(false) >= 4 * CostModel::default().swap_io);
    }

    #[test]
    fn disarm_restores_benign_handling() {
        let mut m = machine(false, 8);
        touch(&mut m, 0);
        m.os.attack_arm(&mut m.mmu, &[page(0).vpn()], true).unwrap();
        m.os.disarm(&mut m.mmu).unwrap();
        assert_eq!(m.os.mode(), HandlerMode::Benign);
        assert!(present(&m, 0));
        touch(&mut m, 0);
        assert!(m.os.leakage_report().is_empty());
        assert_eq!(m.os.io().backing_reads, 1);
    }

    #[test]
    fn unmapped_target_is_rejected() {
        let mut m = machine(false, 8);
        let err = m.os.attack_arm(&mut m.mmu, &[page(9).vpn()], false).unwrap_err();
        assert!(matches!(err, OsError::UnmappedTarget(_)));
        assert_eq!(m.os.mode(), HandlerMode::Benign);
    }

    #[test]
    fn nothing_resident_to_reclaim() {
        let mut m = machine(false, 2);
        assert!(matches!(m.os.swap_out_victim(&mut m.mmu), Err(OsError::NothingResident)));
    }

    #[test]
    fn fault_records_are_deterministic() {
        let go = || {
            let mut m = machine(false, 3);
            for i in [0, 4, 1, 0, 7, 2, 4, 9, 0] {
                touch(&mut m, i);
            }
            m.os.fault_log().to_vec()
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn leakage_csv() {
        let mut m = machine(false, 8);
        touch(&mut m, 2);
        m.os.attack_arm(&mut m.mmu, &[page(2).vpn()], false).unwrap();
        touch(&mut m, 2);
        let mut buf = Vec::new();
        m.os.attacker().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let tick = m.os.leakage_report()[0].0;
        assert_eq!(text, format!("tick,vpn_hex\n{tick},0x40002\n"));
    }
}
