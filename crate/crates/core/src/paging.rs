//! Four-level page tables over a 48-bit virtual address space.
//!
//! Tables live in a private store and are addressed by simulated physical
//! addresses handed out in allocation order. The walker reports three
//! distinct outcomes so callers can tell a page whose entry is resident but
//! marked not-present apart from a slot that was never populated.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAGE_SHIFT: u32 = 12;
pub const PAGE_SIZE: u64 = 1 << PAGE_SHIFT;
pub const ENTRIES_PER_TABLE: usize = 512;
pub const VA_BITS: u32 = 48;
/// Size of one page-table entry in bytes.
pub const PTE_BYTES: u64 = 8;

/// Physical addresses of page-table pages start here so they never collide
/// with data frames in debug output.
const TABLE_REGION_BASE: u64 = 0x10_0000_0000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PagingError {
    #[error("virtual address {0:#x} exceeds 48 bits")]
    AddressOutOfRange(u64),
    #[error("page index {value} out of range for {field}")]
    IndexOutOfRange { field: &'static str, value: u64 },
    #[error("virtual address {0} is already mapped")]
    AlreadyMapped(VirtAddr),
    #[error("virtual address {0} has no leaf entry")]
    NotMapped(VirtAddr),
}

/// A 48-bit virtual byte address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct VirtAddr(u64);

impl VirtAddr {
    pub const fn zero() -> Self {
        VirtAddr(0)
    }

    pub fn new(raw: u64) -> Result<Self, PagingError> {
        if raw >> VA_BITS != 0 {
            return Err(PagingError::AddressOutOfRange(raw));
        }
        Ok(VirtAddr(raw))
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn vpn(self) -> Vpn {
        Vpn(self.0 >> PAGE_SHIFT)
    }

    pub fn page_offset(self) -> u64 {
        self.0 & (PAGE_SIZE - 1)
    }

    pub fn page_base(self) -> VirtAddr {
        VirtAddr(self.0 & !(PAGE_SIZE - 1))
    }

    /// Splits the address into the four 9-bit table indices and the page offset.
    pub fn split(self) -> PageIndices {
        let idx = |shift: u32| ((self.0 >> shift) & 0x1ff) as u16;
        PageIndices {
            pgd: idx(39),
            pud: idx(30),
            pmd: idx(21),
            pt: idx(12),
            offset: self.page_offset() as u16,
        }
    }
}

impl TryFrom<u64> for VirtAddr {
    type Error = PagingError;
    fn try_from(raw: u64) -> Result<Self, Self::Error> {
        VirtAddr::new(raw)
    }
}

impl From<VirtAddr> for u64 {
    fn from(va: VirtAddr) -> u64 {
        va.0
    }
}

impl fmt::Debug for VirtAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VirtAddr({:#x})", self.0)
    }
}

impl fmt::Display for VirtAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// Virtual page number (36 significant bits).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Vpn(pub u64);

impl Vpn {
    pub fn base(self) -> VirtAddr {
        VirtAddr(self.0 << PAGE_SHIFT)
    }
}

impl fmt::Debug for Vpn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vpn({:#x})", self.0)
    }
}

impl fmt::Display for Vpn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PageIndices {
    pub pgd: u16,
    pub pud: u16,
    pub pmd: u16,
    pub pt: u16,
    pub offset: u16,
}

impl PageIndices {
    pub fn new(pgd: u16, pud: u16, pmd: u16, pt: u16, offset: u16) -> Result<Self, PagingError> {
        for (field, value) in [("pgd", pgd), ("pud", pud), ("pmd", pmd), ("pt", pt)] {
            if value as usize >= ENTRIES_PER_TABLE {
                return Err(PagingError::IndexOutOfRange { field, value: value as u64 });
            }
        }
        if offset as u64 >= PAGE_SIZE {
            return Err(PagingError::IndexOutOfRange { field: "offset", value: offset as u64 });
        }
        Ok(PageIndices { pgd, pud, pmd, pt, offset })
    }

    pub fn compose(&self) -> VirtAddr {
        VirtAddr(
            (self.pgd as u64) << 39
                | (self.pud as u64) << 30
                | (self.pmd as u64) << 21
                | (self.pt as u64) << 12
                | self.offset as u64,
        )
    }

    /// Index of this entry at the given level.
    pub fn at(&self, level: Level) -> usize {
        match level {
            Level::Pgd => self.pgd as usize,
            Level::Pud => self.pud as usize,
            Level::Pmd => self.pmd as usize,
            Level::Pt => self.pt as usize,
        }
    }
}

/// Table level, numbered the way the hardware manuals do: 4 is the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Pt = 1,
    Pmd = 2,
    Pud = 3,
    Pgd = 4,
}

impl Level {
    pub fn number(self) -> u8 {
        self as u8
    }

    fn below(self) -> Option<Level> {
        match self {
            Level::Pgd => Some(Level::Pud),
            Level::Pud => Some(Level::Pmd),
            Level::Pmd => Some(Level::Pt),
            Level::Pt => None,
        }
    }

    const TOP_DOWN: [Level; 4] = [Level::Pgd, Level::Pud, Level::Pmd, Level::Pt];
}

/// Simulated physical byte address of a page-table page.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TableAddr(pub u64);

impl TableAddr {
    /// Physical address of entry `index` inside this table.
    pub fn entry_addr(self, index: usize) -> u64 {
        self.0 + index as u64 * PTE_BYTES
    }
}

impl fmt::Debug for TableAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TableAddr({:#x})", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhysAddr {
    pub frame: u64,
    pub offset: u16,
}

impl PhysAddr {
    pub fn raw(&self) -> u64 {
        self.frame << PAGE_SHIFT | self.offset as u64
    }
}

/// A page-table entry. For intermediate levels `frame` holds the physical
/// address of the next table; for leaves it is the data frame number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PageTableEntry {
    pub present: bool,
    pub frame: u64,
    pub is_user: bool,
}

/// Where a particular entry lives: the table it sits in and its slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EntryLocation {
    pub table: TableAddr,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkOutcome {
    Translated(PhysAddr),
    /// The entry exists but its present bit is clear.
    NotPresent { level: Level, location: EntryLocation },
    /// No entry was ever created in this slot.
    NotMapped { level: Level },
}

impl WalkOutcome {
    /// Number of table entries read to reach this outcome.
    pub fn entries_read(&self) -> u64 {
        match self {
            WalkOutcome::Translated(_) => 4,
            WalkOutcome::NotPresent { level, .. } | WalkOutcome::NotMapped { level } => {
                5 - level.number() as u64
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Table {
    level: Level,
    entries: Vec<Option<PageTableEntry>>,
}

impl Table {
    fn new(level: Level) -> Self {
        Table { level, entries: vec![None; ENTRIES_PER_TABLE] }
    }
}

/// Backing store for every page-table page in the simulated machine.
#[derive(Debug, Clone)]
pub struct PageTable {
    tables: Vec<Table>,
    root: TableAddr,
}

impl Default for PageTable {
    fn default() -> Self {
        Self::new()
    }
}

impl PageTable {
    /// Creates a store holding a single empty PGD; its address is `cr3()`.
    pub fn new() -> Self {
        let mut pt = PageTable { tables: Vec::new(), root: TableAddr(0) };
        pt.root = pt.alloc(Level::Pgd);
        pt
    }

    pub fn cr3(&self) -> TableAddr {
        self.root
    }

    /// Allocates an additional, independent PGD (a second address space).
    pub fn create_root(&mut self) -> TableAddr {
        self.alloc(Level::Pgd)
    }

    pub fn table_count(&self) -> usize {
        self.tables.len()
    }

    fn alloc(&mut self, level: Level) -> TableAddr {
        let addr = TableAddr(TABLE_REGION_BASE + self.tables.len() as u64 * PAGE_SIZE);
        self.tables.push(Table::new(level));
        addr
    }

    fn slot_of(addr: TableAddr) -> usize {
        assert!(
            addr.0 >= TABLE_REGION_BASE && (addr.0 - TABLE_REGION_BASE).is_multiple_of(PAGE_SIZE),
            "simulator integrity: {addr:?} is not a table address"
        );
        ((addr.0 - TABLE_REGION_BASE) / PAGE_SIZE) as usize
    }

    fn table(&self, addr: TableAddr, level: Level) -> &Table {
        let t = self
            .tables
            .get(Self::slot_of(addr))
            .unwrap_or_else(|| panic!("simulator integrity: dangling table reference {addr:?}"));
        assert_eq!(t.level, level, "simulator integrity: {addr:?} is not a level-{} table", level.number());
        t
    }

    fn table_mut(&mut self, addr: TableAddr, level: Level) -> &mut Table {
        let slot = Self::slot_of(addr);
        let t = self
            .tables
            .get_mut(slot)
            .unwrap_or_else(|| panic!("simulator integrity: dangling table reference {addr:?}"));
        assert_eq!(t.level, level, "simulator integrity: {addr:?} is not a level-{} table", level.number());
        t
    }

    /// Raw entries of one table, for inspection.
    pub fn table_entries(&self, addr: TableAddr) -> &[Option<PageTableEntry>] {
        let t = self
            .tables
            .get(Self::slot_of(addr))
            .unwrap_or_else(|| panic!("simulator integrity: dangling table reference {addr:?}"));
        &t.entries
    }

    pub fn entry_at(&self, loc: EntryLocation) -> Option<PageTableEntry> {
        self.table_entries(loc.table)[loc.index]
    }

    /// Walks from `cr3` down to the leaf. Never mutates anything.
    pub fn walk(&self, cr3: TableAddr, va: VirtAddr) -> WalkOutcome {
        let idx = va.split();
        let mut table = cr3;
        for level in Level::TOP_DOWN {
            let slot = idx.at(level);
            let Some(entry) = self.table(table, level).entries[slot] else {
                return WalkOutcome::NotMapped { level };
            };
            if !entry.present {
                return WalkOutcome::NotPresent { level, location: EntryLocation { table, index: slot } };
            }
            if level == Level::Pt {
                return WalkOutcome::Translated(PhysAddr { frame: entry.frame, offset: idx.offset });
            }
            table = TableAddr(entry.frame);
        }
        unreachable!("walk always terminates at the leaf level")
    }

    /// Address of the table at `target` level on the path to `va`, if the
    /// walk gets that far through present entries.
    pub fn table_on_path(&self, cr3: TableAddr, va: VirtAddr, target: Level) -> Option<TableAddr> {
        let idx = va.split();
        let mut table = cr3;
        for level in Level::TOP_DOWN {
            if level == target {
                return Some(table);
            }
            let entry = self.table(table, level).entries[idx.at(level)]?;
            if !entry.present {
                return None;
            }
            table = TableAddr(entry.frame);
        }
        None
    }

    /// Location of the PUD entry covering `va`: cr3 → PGD → PUD.
    pub fn pud_entry_location(&self, cr3: TableAddr, va: VirtAddr) -> Option<EntryLocation> {
        let pud = self.table_on_path(cr3, va, Level::Pud)?;
        Some(EntryLocation { table: pud, index: va.split().pud as usize })
    }

    fn leaf_location(&self, cr3: TableAddr, va: VirtAddr) -> Option<EntryLocation> {
        let pt = self.table_on_path(cr3, va, Level::Pt)?;
        let index = va.split().pt as usize;
        self.table(pt, Level::Pt).entries[index]?;
        Some(EntryLocation { table: pt, index })
    }

    /// The leaf entry for `va`, present or not.
    pub fn leaf_entry(&self, cr3: TableAddr, va: VirtAddr) -> Option<PageTableEntry> {
        self.leaf_location(cr3, va).and_then(|loc| self.entry_at(loc))
    }

    pub fn map_page(&mut self, cr3: TableAddr, va: VirtAddr, frame: u64, is_user: bool) -> Result<(), PagingError> {
        let idx = va.split();
        let mut table = cr3;
        for level in [Level::Pgd, Level::Pud, Level::Pmd] {
            let slot = idx.at(level);
            let existing = self.table(table, level).entries[slot];
            table = match existing {
                Some(e) => TableAddr(e.frame),
                None => {
                    let child = self.alloc(level.below().expect("intermediate level"));
                    self.table_mut(table, level).entries[slot] =
                        Some(PageTableEntry { present: true, frame: child.0, is_user: true });
                    child
                }
            };
        }
        let leaf = &mut self.table_mut(table, Level::Pt).entries[idx.pt as usize];
        if leaf.is_some() {
            return Err(PagingError::AlreadyMapped(va.page_base()));
        }
        *leaf = Some(PageTableEntry { present: true, frame, is_user });
        Ok(())
    }

    fn leaf_mut(&mut self, cr3: TableAddr, va: VirtAddr) -> Result<&mut PageTableEntry, PagingError> {
        let loc = self.leaf_location(cr3, va).ok_or(PagingError::NotMapped(va.page_base()))?;
        Ok(self.table_mut(loc.table, Level::Pt).entries[loc.index]
            .as_mut()
            .expect("leaf_location only returns populated slots"))
    }

    /// Flips only the present bit of the leaf entry; returns its previous value.
    pub fn set_present_bit(&mut self, cr3: TableAddr, va: VirtAddr, value: bool) -> Result<bool, PagingError> {
        let leaf = self.leaf_mut(cr3, va)?;
        Ok(std::mem::replace(&mut leaf.present, value))
    }

    /// Rewrites the frame of an existing leaf entry.
    pub fn set_leaf_frame(&mut self, cr3: TableAddr, va: VirtAddr, frame: u64) -> Result<u64, PagingError> {
        let leaf = self.leaf_mut(cr3, va)?;
        Ok(std::mem::replace(&mut leaf.frame, frame))
    }

    /// Zeroes the leaf entry so the slot reads as never mapped.
    pub fn unmap_page(&mut self, cr3: TableAddr, va: VirtAddr) -> Result<PageTableEntry, PagingError> {
        let loc = self.leaf_location(cr3, va).ok_or(PagingError::NotMapped(va.page_base()))?;
        Ok(self.table_mut(loc.table, Level::Pt).entries[loc.index]
            .take()
            .expect("leaf_location only returns populated slots"))
    }
}
