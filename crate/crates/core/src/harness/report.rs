use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{event_count, HarnessError, Machine, Mode, ScenarioConfig};
use crate::mmu::EventKind;
use crate::workloads::AccessTrace;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

const EVENT_KINDS: [EventKind; 12] = [
    EventKind::TlbHit,
    EventKind::TlbMiss,
    EventKind::WalkTranslated,
    EventKind::SuspiciousNotPresent,
    EventKind::VerifyPass,
    EventKind::VerifyNoRecord,
    EventKind::AttackDetected,
    EventKind::RestoredBypassOs,
    EventKind::FaultForwardedToOs,
    EventKind::FormalAdded,
    EventKind::PreAdded,
    EventKind::LeafRemoved,
];

pub const CSV_HEADER: &str = "schema_version,label,mode,arity,seed,sim_ticks,accesses,footprint_pages,targets,os_faults,\
leakage,leakage_events,undefended_leakage,defended_failures,success_rate,attacks_detected,hash_ops,defense_ticks,\
forest_memory_bytes,overhead_ratio,trees,backing_writes,backing_reads,\
ev_TlbHit,ev_TlbMiss,ev_WalkTranslated,ev_SuspiciousNotPresent,ev_VerifyPass,ev_VerifyNoRecord,ev_AttackDetected,\
ev_RestoredBypassOs,ev_FaultForwardedToOs,ev_FormalAdded,ev_PreAdded,ev_LeafRemoved";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(HarnessError::Config(format!("unknown format `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub label: String,
    pub mode: Mode,
    pub arity: u32,
    pub seed: u64,
    /// Total simulated ticks across all phases.
    pub sim_ticks: u64,
    /// Application accesses performed across all phases.
    pub accesses: u64,
    pub footprint_pages: u64,
    pub targets: u64,
    pub os_faults: u64,
    /// Distinct pages the attacker saw fault.
    pub leakage: u64,
    pub leakage_events: u64,
    pub undefended_leakage: Option<u64>,
    pub defended_failures: Option<u64>,
    pub success_rate: Option<f64>,
    pub attacks_detected: u64,
    pub hash_ops: u64,
    pub defense_ticks: u64,
    pub forest_memory_bytes: u64,
    pub overhead_ratio: f64,
    pub trees: u64,
    pub backing_writes: u64,
    pub backing_reads: u64,
    pub events: BTreeMap<String, u64>,
}

impl MetricsReport {
    pub(super) fn collect(config: &ScenarioConfig, trace: &AccessTrace, m: &Machine, targets: usize) -> Self {
        let counters = m.mmu.counters();
        let footprint = m.mmu.forest().map(|f| f.footprint()).unwrap_or_default();
        let mut events: BTreeMap<String, u64> = EVENT_KINDS.iter().map(|k| (k.name().to_string(), 0)).collect();
        for e in m.mmu.events() {
            *events.get_mut(e.kind.name()).expect("all kinds listed") += 1;
        }
        let io = m.os.io();
        MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            label: trace.label.clone(),
            mode: config.mode,
            arity: config.arity,
            seed: config.seed,
            sim_ticks: counters.ticks,
            accesses: 2 * trace.len() as u64,
            footprint_pages: trace.pages().len() as u64,
            targets: targets as u64,
            os_faults: m.os.fault_log().len() as u64,
            leakage: m.os.attacker().leaked_pages().len() as u64,
            leakage_events: m.os.leakage_report().len() as u64,
            undefended_leakage: None,
            defended_failures: None,
            success_rate: None,
            attacks_detected: event_count(m, EventKind::AttackDetected),
            hash_ops: counters.hash_ops,
            defense_ticks: counters.defense_ticks,
            forest_memory_bytes: footprint.total_bytes(),
            overhead_ratio: footprint.overhead_ratio(),
            trees: footprint.trees as u64,
            backing_writes: io.backing_writes,
            backing_reads: io.backing_reads,
            events,
        }
    }

    /// Fills in the success rate from the undefended run's leakage.
    pub(super) fn attach_paired(&mut self, undefended_leakage: u64) {
        self.undefended_leakage = Some(undefended_leakage);
        self.defended_failures = Some(self.leakage);
        let rate = if undefended_leakage == 0 {
            1.0
        } else {
            (1.0 - self.leakage as f64 / undefended_leakage as f64).clamp(0.0, 1.0)
        };
        self.success_rate = Some(rate);
    }

    pub fn event(&self, kind: EventKind) -> u64 {
        self.events.get(kind.name()).copied().unwrap_or(0)
    }

    pub(super) fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut row = vec![
            self.schema_version.to_string(),
            self.label.clone(),
            self.mode.cli_name().to_string(),
            self.arity.to_string(),
            self.seed.to_string(),
            self.sim_ticks.to_string(),
            self.accesses.to_string(),
            self.footprint_pages.to_string(),
            self.targets.to_string(),
            self.os_faults.to_string(),
            self.leakage.to_string(),
            self.leakage_events.to_string(),
            opt(self.undefended_leakage),
            opt(self.defended_failures),
            self.success_rate.map(|r| r.to_string()).unwrap_or_default(),
            self.attacks_detected.to_string(),
            self.hash_ops.to_string(),
            self.defense_ticks.to_string(),
            self.forest_memory_bytes.to_string(),
            self.overhead_ratio.to_string(),
            self.trees.to_string(),
            self.backing_writes.to_string(),
            self.backing_reads.to_string(),
        ];
        row.extend(EVENT_KINDS.iter().map(|k| self.event(*k).to_string()));
        row
    }
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    schema_version: u32,
    reports: Vec<MetricsReport>,
}

/// Writes reports as a versioned JSON document or as CSV, one row each.
pub fn write_reports<W: Write>(reports: &[MetricsReport], format: ReportFormat, out: W) -> Result<(), HarnessError> {
    match format {
        ReportFormat::Json => {
            let doc = ReportFile { schema_version: REPORT_SCHEMA_VERSION, reports: reports.to_vec() };
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| HarnessError::Encode(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            let enc = |e: csv::Error| HarnessError::Encode(e.to_string());
            w.write_record(CSV_HEADER.split(',')).map_err(enc)?;
            for r in reports {
                w.write_record(r.csv_row()).map_err(enc)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn emit_report(reports: &[MetricsReport], format: ReportFormat, path: &Path) -> Result<(), HarnessError> {
    let file = BufWriter::new(File::create(path)?);
    write_reports(reports, format, file)
}

/// Reads back a JSON report document.
pub fn load_reports<R: Read>(input: R) -> Result<Vec<MetricsReport>, HarnessError> {
    let doc: ReportFile = serde_json::from_reader(input).map_err(|e| HarnessError::Encode(e.to_string()))?;
    if doc.schema_version != REPORT_SCHEMA_VERSION {
        return Err(HarnessError::Encode(format!("unsupported schema version {}", doc.schema_version)));
    }
    Ok(doc.reports)
}
