use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ptguard::cost::{CostModel, CostModelError};
use ptguard::harness::{
    arity_sweep, run_batch, run_scenario_detailed, run_trace, write_reports, HarnessError, MetricsReport, Mode,
    ReportFormat, ScenarioConfig, DEFAULT_FRAME_CAPACITY,
};
use ptguard::tlb::DEFAULT_TLB_CAPACITY;
use ptguard::workloads::{AccessTrace, WorkloadError, WorkloadKind};

#[derive(Parser)]
#[command(name = "ptguard", version, about = "Page-table integrity defense simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Write the MMU event log as JSON lines.
        #[arg(long)]
        events_out: Option<PathBuf>,
        /// Write the attacker's leakage log as CSV.
        #[arg(long)]
        leakage_out: Option<PathBuf>,
    },
    /// Run the same scenario once per tree arity.
    SweepArity {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8")]
        arities: Vec<u32>,
    },
    /// Run a scenario on an externally supplied trace (`R|W <hex va>` per line).
    Replay {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        trace_file: PathBuf,
    },
    /// Run every benchmark workload over a range of seeds.
    Suite {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "baseline")]
    mode: Mode,
    #[arg(long, default_value = "ntimes:100")]
    workload: WorkloadKind,
    #[arg(long, default_value_t = 8)]
    arity: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TLB_CAPACITY)]
    tlb: usize,
    #[arg(long, default_value_t = DEFAULT_FRAME_CAPACITY)]
    frames: u64,
    #[arg(long, default_value_t = 1.0)]
    target_frac: f64,
    /// Fraction of pages mapped before the run without the MMU seeing them.
    #[arg(long, default_value_t = 0.0)]
    unwarmed_frac: f64,
    /// Clear each target once instead of after every access.
    #[arg(long)]
    no_rearm: bool,
    /// TOML file overriding tick charges.
    #[arg(long)]
    cost_model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
}

impl RunArgs {
    fn config(&self) -> Result<ScenarioConfig> {
        let cost = match &self.cost_model {
            Some(path) => CostModel::load(path)?,
            None => CostModel::default(),
        };
        let config = ScenarioConfig {
            arity: self.arity,
            tlb_capacity: self.tlb,
            frame_capacity: self.frames,
            target_frac: self.target_frac,
            unwarmed_frac: self.unwarmed_frac,
            rearm: !self.no_rearm,
            cost,
            ..ScenarioConfig::new(self.mode, self.workload, self.seed)
        };
        config.validate()?;
        Ok(config)
    }

    fn emit(&self, reports: &[MetricsReport]) -> Result<()> {
        match &self.out {
            Some(path) => {
                let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                write_reports(reports, self.format, BufWriter::new(file))?;
            }
            None => write_reports(reports, self.format, io::stdout().lock())?,
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { run, events_out, leakage_out } => {
            let scenario = run_scenario_detailed(&run.config()?)?;
            if let Some(path) = events_out {
                let mut out = create(&path)?;
                scenario.machine.mmu.write_events_jsonl(&mut out)?;
                out.flush()?;
            }
            if let Some(path) = leakage_out {
                scenario.machine.os.attacker().write_csv(create(&path)?)?;
            }
            run.emit(&[scenario.report])
        }
        Command::SweepArity { run, arities } => {
            let reports = arity_sweep(&run.config()?, &arities)?;
            run.emit(&reports)
        }
        Command::Replay { run, trace_file } => {
            let file = File::open(&trace_file).with_context(|| format!("opening {}", trace_file.display()))?;
            let label = trace_file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let trace = AccessTrace::read_from(BufReader::new(file), &label)?;
            let report = run_trace(&run.config()?, &trace)?;
            run.emit(&[report])
        }
        Command::Suite { run, seeds } => {
            let base = run.config()?;
            let configs: Vec<ScenarioConfig> = (0..seeds)
                .flat_map(|s| WorkloadKind::suite().into_iter().map(move |w| ScenarioConfig { workload: w, seed: base.seed + s, ..base }))
                .collect();
            let reports = run_batch(&configs).into_iter().collect::<Result<Vec<_>, _>>()?;
            run.emit(&reports)
        }
    }
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<HarnessError>().is_some_and(HarnessError::is_config)
            || e.is::<CostModelError>()
            || e.is::<WorkloadError>()
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
