//! Sweep orchestration: shared runs for every (workload, density, policy)
//! cell plus the solo runs weighted speedup needs, executed in parallel and
//! merged in a fixed order.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use refsim_core::audit::AuditReport;
use refsim_core::metrics::{harmonic_speedup, max_slowdown, weighted_speedup, MetricError};
use refsim_core::oracle::oracle_check;
use refsim_core::system::{CoreSpec, Simulation};
use refsim_core::workload::{SynthRandom, SynthStream, TraceRecord, TraceSource};
use refsim_core::{ConfigError, PolicyKind};
use thiserror::Error;

use crate::config::{AloneBaseline, ConfigFileError, CoreWorkload, SimConfig, WorkloadKind};
use crate::io::{self, FormatError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error("loading trace: {0}")]
    Trace(#[source] FormatError),
    #[error("{cell}: simulation assertion failed: {message}")]
    Assertion { cell: String, message: String },
    #[error("{cell}: {source}")]
    Metric {
        cell: String,
        #[source]
        source: MetricError,
    },
    #[error("writing dump: {0}")]
    Dump(#[source] FormatError),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.into())
    }
}

impl RunError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Trace(_) => 1,
            _ => 2,
        }
    }
}

/// Optional per-cell dump files. With more than one cell, the cell name is
/// inserted before the extension (`log.csv` → `log.dsarp-32-random.csv`).
#[derive(Debug, Clone, Default)]
pub struct Dumps {
    pub refresh_log: Option<PathBuf>,
    pub cmd_trace: Option<PathBuf>,
    pub latency: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    pub dumps: Dumps,
    /// Record every command and re-check it with the timing oracle.
    pub check_oracle: bool,
}

/// One CSV result row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub policy: PolicyKind,
    pub density_gbit: u32,
    pub workload: String,
    pub seed: u64,
    pub ws: f64,
    pub hs: f64,
    pub max_slowdown: f64,
    pub energy_per_access_pj: f64,
    pub refresh_count: u64,
    pub postponed: u64,
    pub pulled_in: u64,
    pub forced: u64,
    pub subarray_conflicts: u64,
    pub avg_read_latency_cycles: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoloRow {
    /// Policy the solo run used.
    pub policy: PolicyKind,
    pub density_gbit: u32,
    pub workload: String,
    pub core: usize,
    pub alone_ipc: f64,
}

#[derive(Debug, Clone)]
pub struct CellReport {
    pub row: ResultRow,
    pub shared_ipc: Vec<f64>,
    pub alone_ipc: Vec<f64>,
    /// `None` for the refresh-free reference, which is exempt.
    pub audit: Option<AuditReport>,
    /// Oracle violations summed over channels, when checked.
    pub oracle_violations: Option<usize>,
}

impl CellReport {
    pub fn name(&self) -> String {
        cell_name(self.row.policy, self.row.density_gbit, &self.row.workload)
    }

    pub fn audit_passed(&self) -> bool {
        self.audit.as_ref().is_none_or(|a| a.passed())
    }

    pub fn oracle_passed(&self) -> bool {
        self.oracle_violations.is_none_or(|v| v == 0)
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub cells: Vec<CellReport>,
    pub solo: Vec<SoloRow>,
}

impl SweepOutput {
    /// Cells whose audit or oracle check failed.
    pub fn failures(&self) -> impl Iterator<Item = &CellReport> {
        self.cells.iter().filter(|c| !c.audit_passed() || !c.oracle_passed())
    }
}

pub fn cell_name(policy: PolicyKind, density: u32, workload: &str) -> String {
    format!("{}-{}-{}", policy.name(), density, workload)
}

fn cell_path(base: &Path, cell: &str, multi: bool) -> PathBuf {
    if !multi {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("dump");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.{cell}.{ext}"),
        None => format!("{stem}.{cell}"),
    };
    base.with_file_name(name)
}

/// Deterministic per-core generator seed.
fn core_seed(seed: u64, core: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (core as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

type TraceCache = BTreeMap<PathBuf, Arc<Vec<TraceRecord>>>;

fn load_traces(cfg: &SimConfig) -> Result<TraceCache, RunError> {
    let mut cache = TraceCache::new();
    for w in &cfg.workloads {
        for c in &w.cores {
            if let Some(p) = &c.trace {
                if !cache.contains_key(p) {
                    let recs = io::load_trace(p).map_err(RunError::Trace)?;
                    cache.insert(p.clone(), Arc::new(recs));
                }
            }
        }
    }
    Ok(cache)
}

fn source(c: &CoreWorkload, seed: u64, traces: &TraceCache) -> Result<TraceSource, ConfigError> {
    Ok(match c.kind {
        WorkloadKind::Random => {
            TraceSource::Random(SynthRandom::new(seed, c.footprint_bytes, c.read_fraction, c.intensity)?)
        }
        WorkloadKind::Stream => TraceSource::Stream(
            SynthStream::new(seed, c.footprint_bytes, c.stride)?
                .with_read_fraction(c.read_fraction)
                .with_intensity(c.intensity),
        ),
        WorkloadKind::Trace => {
            let path = c.trace.as_ref().expect("validated");
            TraceSource::looped(traces[path].clone())?
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct SoloKey {
    policy: PolicyKind,
    density: u32,
    workload: usize,
    core: usize,
}

#[derive(Debug, Clone, Copy)]
enum Job {
    Solo(SoloKey),
    Shared {
        policy: PolicyKind,
        density: u32,
        workload: usize,
    },
}

struct SharedResult {
    row: ResultRow,
    shared_ipc: Vec<f64>,
    audit: Option<AuditReport>,
    oracle_violations: Option<usize>,
}

enum JobResult {
    Solo(f64),
    Shared(Box<SharedResult>),
}

struct Ctx<'a> {
    cfg: &'a SimConfig,
    traces: TraceCache,
    opts: &'a RunOptions,
    multi: bool,
}

impl Ctx<'_> {
    fn cores(&self, workload: usize, which: Option<usize>) -> Result<Vec<CoreSpec>, ConfigError> {
        let w = &self.cfg.workloads[workload];
        w.cores
            .iter()
            .enumerate()
            .filter(|(i, _)| which.is_none_or(|k| k == *i))
            .map(|(i, c)| {
                Ok(CoreSpec {
                    id: i,
                    source: source(c, core_seed(self.cfg.seed, i), &self.traces)?,
                })
            })
            .collect()
    }

    fn solo(&self, k: SoloKey) -> Result<f64, RunError> {
        let sys = self.cfg.system(k.policy, k.density)?;
        let n = self.cfg.workloads[k.workload].cores.len();
        let mut sim = Simulation::new(&sys, self.cores(k.workload, Some(k.core))?, n)?;
        sim.run_configured();
        Ok(sim.stats().ipc()[0])
    }

    fn shared(&self, policy: PolicyKind, density: u32, workload: usize) -> Result<SharedResult, RunError> {
        let w = &self.cfg.workloads[workload];
        let cell = cell_name(policy, density, &w.name);
        let mut sys = self.cfg.system(policy, density)?;
        let dumps = &self.opts.dumps;
        sys.record_commands = self.opts.check_oracle || dumps.cmd_trace.is_some();
        let mut sim = Simulation::new(&sys, self.cores(workload, None)?, w.cores.len())?;
        sim.run_configured();
        let stats = sim.stats();
        let energy = sim.energy(&stats);

        let audit = (policy != PolicyKind::NoRefresh).then(|| sim.audit());
        let oracle_violations = self.opts.check_oracle.then(|| {
            sim.channels()
                .iter()
                .map(|ch| oracle_check(ch.engine().config(), ch.command_trace().unwrap_or(&[])).len())
                .sum()
        });

        let dump_err = |e: std::io::Error, p: &Path| {
            RunError::Dump(FormatError::Io {
                path: p.to_path_buf(),
                source: e,
            })
        };
        if let Some(base) = &dumps.refresh_log {
            let p = cell_path(base, &cell, self.multi);
            let logs: Vec<_> = sim.channels().iter().map(|c| c.refresh_log()).collect();
            io::write_refresh_log(io::create(&p).map_err(RunError::Dump)?, &logs).map_err(|e| dump_err(e, &p))?;
        }
        if let Some(base) = &dumps.cmd_trace {
            let p = cell_path(base, &cell, self.multi);
            let mut all: Vec<_> = sim
                .channels()
                .iter()
                .flat_map(|c| c.command_trace().unwrap_or(&[]).iter().copied())
                .collect();
            all.sort_by_key(|(c, t)| (*t, c.channel));
            io::write_command_trace(io::create(&p).map_err(RunError::Dump)?, &all).map_err(|e| dump_err(e, &p))?;
        }
        if let Some(base) = &dumps.latency {
            let p = cell_path(base, &cell, self.multi);
            io::write_latency_histogram(io::create(&p).map_err(RunError::Dump)?, &stats.read_latency)
                .map_err(|e| dump_err(e, &p))?;
        }

        Ok(SharedResult {
            row: ResultRow {
                policy,
                density_gbit: density,
                workload: w.name.clone(),
                seed: self.cfg.seed,
                ws: 0.0,
                hs: 0.0,
                max_slowdown: 0.0,
                energy_per_access_pj: energy.per_access_pj,
                refresh_count: stats.commands().refreshes(),
                postponed: stats.refresh.postponed,
                pulled_in: stats.refresh.pulled_in,
                forced: stats.refresh.forced,
                subarray_conflicts: stats.subarray_conflicts,
                avg_read_latency_cycles: stats.read_latency.mean(),
            },
            shared_ipc: stats.ipc(),
            audit,
            oracle_violations,
        })
    }

    fn run(&self, job: Job) -> Result<JobResult, RunError> {
        let cell = match job {
            Job::Solo(k) => format!(
                "{} (solo core {})",
                cell_name(k.policy, k.density, &self.cfg.workloads[k.workload].name),
                k.core
            ),
            Job::Shared {
                policy,
                density,
                workload,
            } => cell_name(policy, density, &self.cfg.workloads[workload].name),
        };
        let out = catch_unwind(AssertUnwindSafe(|| match job {
            Job::Solo(k) => self.solo(k).map(JobResult::Solo),
            Job::Shared {
                policy,
                density,
                workload,
            } => self
                .shared(policy, density, workload)
                .map(|r| JobResult::Shared(Box::new(r))),
        }));
        out.unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(RunError::Assertion { cell, message })
        })
    }
}

fn alone_policy(cfg: &SimConfig, policy: PolicyKind) -> PolicyKind {
    match cfg.alone {
        AloneBaseline::NoRefresh => PolicyKind::NoRefresh,
        AloneBaseline::SamePolicy => policy,
    }
}

/// Runs every cell of the sweep. Rows come out ordered by workload, then
/// density, then policy, in configuration order, whatever the thread count.
pub fn run_sweep(cfg: &SimConfig, opts: &RunOptions) -> Result<SweepOutput, RunError> {
    cfg.validate()?;
    let traces = load_traces(cfg)?;
    let mut cells = Vec::new();
    let mut solo_keys = Vec::new();
    for w in 0..cfg.workloads.len() {
        for &d in &cfg.densities {
            for &p in &cfg.policies {
                cells.push((p, d, w));
                for core in 0..cfg.workloads[w].cores.len() {
                    let k = SoloKey {
                        policy: alone_policy(cfg, p),
                        density: d,
                        workload: w,
                        core,
                    };
                    if !solo_keys.contains(&k) {
                        solo_keys.push(k);
                    }
                }
            }
        }
    }
    let jobs: Vec<Job> = solo_keys
        .iter()
        .map(|&k| Job::Solo(k))
        .chain(cells.iter().map(|&(policy, density, workload)| Job::Shared {
            policy,
            density,
            workload,
        }))
        .collect();

    let ctx = Ctx {
        cfg,
        traces,
        opts,
        multi: cells.len() > 1,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| RunError::Config(ConfigFileError::Other(e.to_string())))?;
    let results: Vec<Result<JobResult, RunError>> = pool.install(|| jobs.par_iter().map(|&j| ctx.run(j)).collect());
    let results: Vec<JobResult> = results.into_iter().collect::<Result<_, _>>()?;

    let mut alone: BTreeMap<SoloKey, f64> = BTreeMap::new();
    let mut solo = Vec::new();
    let mut reports = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        match (job, res) {
            (Job::Solo(k), JobResult::Solo(ipc)) => {
                alone.insert(*k, ipc);
                solo.push(SoloRow {
                    policy: k.policy,
                    density_gbit: k.density,
                    workload: cfg.workloads[k.workload].name.clone(),
                    core: k.core,
                    alone_ipc: ipc,
                });
            }
            (
                &Job::Shared {
                    policy,
                    density,
                    workload,
                },
                JobResult::Shared(r),
            ) => {
                let SharedResult {
                    mut row,
                    shared_ipc,
                    audit,
                    oracle_violations,
                } = *r;
                let alone_ipc: Vec<f64> = (0..shared_ipc.len())
                    .map(|core| {
                        alone[&SoloKey {
                            policy: alone_policy(cfg, policy),
                            density,
                            workload,
                            core,
                        }]
                    })
                    .collect();
                let metric = |source| RunError::Metric {
                    cell: cell_name(policy, density, &row.workload),
                    source,
                };
                row.ws = weighted_speedup(&shared_ipc, &alone_ipc).map_err(metric)?;
                row.hs = harmonic_speedup(&shared_ipc, &alone_ipc).map_err(metric)?;
                row.max_slowdown = max_slowdown(&shared_ipc, &alone_ipc).map_err(metric)?;
                reports.push(CellReport {
                    row,
                    shared_ipc,
                    alone_ipc,
                    audit,
                    oracle_violations,
                });
            }
            _ => unreachable!("results follow job order"),
        }
    }
    Ok(SweepOutput { cells: reports, solo })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_paths() {
        let p = Path::new("/tmp/log.csv");
        assert_eq!(cell_path(p, "ab-8-random", false), p);
        assert_eq!(cell_path(p, "ab-8-random", true), Path::new("/tmp/log.ab-8-random.csv"));
        assert_eq!(cell_path(Path::new("trace"), "x", true), Path::new("trace.x"));
    }

    fn report(audit: Option<AuditReport>, oracle: Option<usize>) -> CellReport {
        CellReport {
            row: ResultRow {
                policy: PolicyKind::Darp,
                density_gbit: 32,
                workload: "random".into(),
                seed: 1,
                ws: 1.0,
                hs: 1.0,
                max_slowdown: 1.0,
                energy_per_access_pj: 1.0,
                refresh_count: 0,
                postponed: 0,
                pulled_in: 0,
                forced: 0,
                subarray_conflicts: 0,
                avg_read_latency_cycles: 0.0,
            },
            shared_ipc: Vec::new(),
            alone_ipc: Vec::new(),
            audit,
            oracle_violations: oracle,
        }
    }

    #[test]
    fn failures_cover_audit_and_oracle() {
        let stale = AuditReport {
            stale_total: 3,
            ..AuditReport::default()
        };
        let out = SweepOutput {
            cells: vec![
                report(None, None),
                report(Some(AuditReport::default()), Some(0)),
                report(Some(stale), None),
                report(Some(AuditReport::default()), Some(2)),
            ],
            solo: Vec::new(),
        };
        assert_eq!(out.failures().count(), 2);
        assert_eq!(out.cells[2].name(), "darp-32-random");
    }

    #[test]
    fn exit_codes() {
        let assertion = RunError::Assertion {
            cell: "x".into(),
            message: "boom".into(),
        };
        assert_eq!(assertion.exit_code(), 2);
        assert_eq!(RunError::from(ConfigError::UnknownDensity(12)).exit_code(), 1);
    }

    #[test]
    fn core_seeds_differ_and_repeat() {
        assert_eq!(core_seed(7, 3), core_seed(7, 3));
        assert_ne!(core_seed(7, 3), core_seed(7, 4));
        assert_ne!(core_seed(7, 3), core_seed(8, 3));
    }
}
