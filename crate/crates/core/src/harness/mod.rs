//! Scenario runner: builds a kernel, MMU and attacker around a workload
//! trace, replays it through warm, arm and measure phases, and reports.

mod batch;
mod report;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostModel;
use crate::ddforest::{Arity, DefenseForest};
use crate::mmu::{AccessResult, EventKind, MmuContext, MmuError};
use crate::os_sim::{OsError, OsKernel};
use crate::paging::{PhysAddr, VirtAddr, Vpn};
use crate::tlb::{Tlb, DEFAULT_TLB_CAPACITY};
use crate::workloads::{generate_trace, Access, AccessTrace, Op, WorkloadError, WorkloadKind, WorkloadSpec};

pub use batch::{arity_sweep, run_batch, run_batch_sequential, DEFAULT_SWEEP_ARITIES};
pub use report::{emit_report, load_reports, write_reports, ReportFormat, REPORT_SCHEMA_VERSION, CSV_HEADER};
pub use report::MetricsReport;

pub const DEFAULT_FRAME_CAPACITY: u64 = 4096;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Mmu(#[from] MmuError),
    #[error(transparent)]
    Os(#[from] OsError),
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("report encoding: {0}")]
    Encode(String),
}

impl HarnessError {
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_) | HarnessError::Workload(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Baseline,
    AttackNoDefense,
    AttackWithDefense,
    AttackWithSwap,
    /// Defense enabled, no attacker. Used to check for false alarms.
    DefenseNoAttack,
}

impl Mode {
    pub fn attacked(self) -> bool {
        matches!(self, Mode::AttackNoDefense | Mode::AttackWithDefense | Mode::AttackWithSwap)
    }

    pub fn defended(self) -> bool {
        matches!(self, Mode::AttackWithDefense | Mode::DefenseNoAttack)
    }

    pub fn swap(self) -> bool {
        self == Mode::AttackWithSwap
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::AttackNoDefense => "attack",
            Mode::AttackWithDefense => "defend",
            Mode::AttackWithSwap => "attack-swap",
            Mode::DefenseNoAttack => "defend-only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Mode::Baseline, Mode::AttackNoDefense, Mode::AttackWithDefense, Mode::AttackWithSwap, Mode::DefenseNoAttack]
            .into_iter()
            .find(|m| m.cli_name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub workload: WorkloadKind,
    pub seed: u64,
    pub arity: u32,
    pub tlb_capacity: usize,
    pub frame_capacity: u64,
    /// Fraction of victim pages the attacker targets.
    pub target_frac: f64,
    /// Fraction of victim pages mapped by the loader before the run, so the
    /// MMU never sees their first touch.
    pub unwarmed_frac: f64,
    /// Attacker clears a target again each time it finds it present.
    pub rearm: bool,
    pub cost: CostModel,
}

impl ScenarioConfig {
    pub fn new(mode: Mode, workload: WorkloadKind, seed: u64) -> Self {
        ScenarioConfig {
            mode,
            workload,
            seed,
            arity: Arity::default().get(),
            tlb_capacity: DEFAULT_TLB_CAPACITY,
            frame_capacity: DEFAULT_FRAME_CAPACITY,
            target_frac: 1.0,
            unwarmed_frac: 0.0,
            rearm: true,
            cost: CostModel::default(),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.frame_capacity < 1 {
            return bad("frame capacity must be at least 1".into());
        }
        if self.tlb_capacity < 1 {
            return bad("TLB capacity must be at least 1".into());
        }
        if Arity::new(self.arity).is_err() {
            return bad(format!("arity {} is below 2", self.arity));
        }
        for (name, v) in [("target fraction", self.target_frac), ("unwarmed fraction", self.unwarmed_frac)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} is outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// The simulated machine: kernel plus MMU.
#[derive(Debug, Clone)]
pub struct Machine {
    pub os: OsKernel,
    pub mmu: MmuContext,
}

impl Machine {
    pub fn new(frame_capacity: u64, tlb_capacity: usize, cost: CostModel, forest: Option<DefenseForest>) -> Result<Self, HarnessError> {
        let os = OsKernel::new(frame_capacity)?;
        let mmu = MmuContext::new(os.cr3(), Tlb::new(tlb_capacity), cost, forest);
        Ok(Machine { os, mmu })
    }

    /// One application access: translate, fault and retry if needed, touch
    /// the data, then let the kernel observe the completed access.
    pub fn access(&mut self, access: Access) -> Result<PhysAddr, HarnessError> {
        let va = access.va;
        let pa = match self.mmu.translate_result(self.os.page_table_mut(), va)? {
            AccessResult::Ok(pa) => pa,
            AccessResult::NeedsOsFault(_) => self.mmu.resolve_and_retry(&mut self.os, va)?,
        };
        if access.op == Op::Write {
            self.os.write_byte(pa, va.raw() as u8);
        }
        self.os.after_access(&mut self.mmu, va)?;
        Ok(pa)
    }
}

/// Everything a run produced, for callers that need more than the report.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: MetricsReport,
    pub machine: Machine,
    /// (va, frame) for every access, warm phase first.
    pub translations: Vec<(VirtAddr, u64)>,
    /// Index into `translations` where the measure phase starts.
    pub measure_start: usize,
    pub targets: Vec<Vpn>,
    pub unwarmed: Vec<Vpn>,
}

fn pick(pages: &BTreeSet<Vpn>, frac: f64, rng: &mut ChaCha8Rng) -> Vec<Vpn> {
    let mut all: Vec<Vpn> = pages.iter().copied().collect();
    all.shuffle(rng);
    let k = (frac * all.len() as f64).floor() as usize;
    all.truncate(k);
    all.sort();
    all
}

fn selection_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fa7_7ac4)
}

/// Runs one scenario on an already generated trace, without the paired
/// undefended run.
pub fn run_trace_detailed(config: &ScenarioConfig, trace: &AccessTrace) -> Result<ScenarioRun, HarnessError> {
    config.validate()?;
    let mode = config.mode;
    let forest = mode.defended().then(|| DefenseForest::new(Arity::new(config.arity).expect("validated")));
    let mut m = Machine::new(config.frame_capacity, config.tlb_capacity, config.cost, forest)?;
    m.os.set_rearm(config.rearm);
    let pages = trace.pages();
    m.os.register_pages(pages.iter().copied());

    let mut rng = selection_rng(config.seed);
    let unwarmed = pick(&pages, config.unwarmed_frac, &mut rng);
    for vpn in &unwarmed {
        m.os.preload(&mut m.mmu, vpn.base())?;
    }

    let mut translations = Vec::with_capacity(trace.len() * 2);
    for &a in &trace.accesses {
        translations.push((a.va, m.access(a)?.frame));
    }
    let measure_start = translations.len();

    let mut targets = Vec::new();
    if mode.attacked() {
        targets = pick(&pages, config.target_frac, &mut rng);
        targets.retain(|v| m.os.is_resident(*v));
        m.os.attack_arm(&mut m.mmu, &targets, mode.swap())?;
    }

    for &a in &trace.accesses {
        translations.push((a.va, m.access(a)?.frame));
    }

    let report = MetricsReport::collect(config, trace, &m, targets.len());
    Ok(ScenarioRun { report, machine: m, translations, measure_start, targets, unwarmed })
}

/// Full scenario on a trace. Defended attack runs also execute the paired
/// undefended run on the same seed to compute the success rate.
pub fn run_trace(config: &ScenarioConfig, trace: &AccessTrace) -> Result<MetricsReport, HarnessError> {
    let mut report = run_trace_detailed(config, trace)?.report;
    if config.mode == Mode::AttackWithDefense {
        let paired = run_trace_detailed(&config.with_mode(Mode::AttackNoDefense), trace)?.report;
        report.attach_paired(paired.leakage);
    }
    Ok(report)
}

pub fn workload_trace(config: &ScenarioConfig) -> Result<AccessTrace, HarnessError> {
    Ok(generate_trace(&WorkloadSpec::new(config.workload, config.seed))?)
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<MetricsReport, HarnessError> {
    config.validate()?;
    run_trace(config, &workload_trace(config)?)
}

pub fn run_scenario_detailed(config: &ScenarioConfig) -> Result<ScenarioRun, HarnessError> {
    config.validate()?;
    let trace = workload_trace(config)?;
    let mut run = run_trace_detailed(config, &trace)?;
    if config.mode == Mode::AttackWithDefense {
        let paired = run_trace_detailed(&config.with_mode(Mode::AttackNoDefense), &trace)?.report;
        run.report.attach_paired(paired.leakage);
    }
    Ok(run)
}

/// Distinct targeted pages touched after arming, read straight off the
/// trace. An undefended attacker should observe exactly these.
pub fn targeted_access_oracle(trace: &AccessTrace, targets: &[Vpn]) -> usize {
    let targets: BTreeSet<Vpn> = targets.iter().copied().collect();
    trace.pages().intersection(&targets).count()
}

pub(crate) fn event_count(m: &Machine, kind: EventKind) -> u64 {
    m.mmu.events().iter().filter(|e| e.kind == kind).count() as u64
}
