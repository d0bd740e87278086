use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use refsim::config::{ConfigFileError, SimConfig, Workload, WorkloadKind};
use refsim::runner::Dumps;
use refsim::{csv, load_config, run_sweep, RunOptions};
use refsim_core::PolicyKind;

/// Cycle-level DRAM refresh-policy simulator.
///
/// Runs every (workload, density, policy) cell of the sweep plus the solo
/// runs weighted speedup needs, and writes one CSV row per cell.
/// Exit codes: 0 success, 1 configuration error, 2 simulation assertion,
/// 3 retention audit or timing oracle failure.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Cli {
    /// Configuration file (`key = value`, `[section]`, `#` comments).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Refresh policies to sweep (overrides the config).
    #[arg(long, num_args = 1.., value_delimiter = ',', value_parser = parse_policy)]
    policy: Vec<PolicyKind>,
    /// Chip densities in Gb to sweep: 8, 16 or 32.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    density: Vec<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cores per workload mix.
    #[arg(long)]
    cores: Option<usize>,
    /// Warmup DRAM cycles before measurement.
    #[arg(long)]
    warmup: Option<u64>,
    /// Measured DRAM cycles.
    #[arg(long)]
    cycles: Option<u64>,
    /// Result CSV; the solo runs go to `<stem>.solo.csv` beside it. Stdout if absent.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Refresh log CSV (`cycle,kind,channel,rank,bank,credit_after,class`).
    #[arg(long, value_name = "FILE")]
    dump_refresh_log: Option<PathBuf>,
    /// Tab-separated command trace (`cycle kind ch rank bank subarray row col`).
    #[arg(long, value_name = "FILE")]
    dump_cmd_trace: Option<PathBuf>,
    /// Read-latency histogram CSV (`latency_cycles,count`).
    #[arg(long, value_name = "FILE")]
    dump_latency: Option<PathBuf>,
    /// Trace files (`.gz` accepted) forming one workload, assigned to cores round-robin.
    #[arg(long, num_args = 1.., value_name = "FILE")]
    trace: Vec<PathBuf>,
    /// Synthetic workloads to sweep, one mix per kind.
    #[arg(long, num_args = 1.., value_delimiter = ',', value_parser = ["random", "stream"])]
    synthetic: Vec<String>,
    /// Re-check every issued command with the timing oracle (memory-hungry).
    #[arg(long)]
    check_oracle: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    PolicyKind::parse(s).map_err(|e| e.to_string())
}

fn apply_cli(cfg: &mut SimConfig, cli: &Cli) -> Result<(), ConfigFileError> {
    if !cli.policy.is_empty() {
        cfg.policies = cli.policy.clone();
    }
    if !cli.density.is_empty() {
        cfg.densities = cli.density.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.warmup {
        cfg.warmup_cycles = w;
    }
    if let Some(m) = cli.cycles {
        cfg.measured_cycles = m;
    }
    let template = cfg.workloads[0].cores[0].clone();
    if let Some(n) = cli.cores {
        for w in cfg.workloads.iter_mut() {
            w.cores.resize(n, template.clone());
        }
    }
    let n = cfg.workloads[0].cores.len();
    if !cli.synthetic.is_empty() || !cli.trace.is_empty() {
        let mut workloads = Vec::new();
        for kind in &cli.synthetic {
            let mut core = template.clone();
            core.kind = kind.parse().map_err(ConfigFileError::Other)?;
            core.trace = None;
            workloads.push(Workload {
                name: kind.clone(),
                cores: vec![core; n],
            });
        }
        if !cli.trace.is_empty() {
            let cores = (0..n)
                .map(|i| {
                    let mut core = template.clone();
                    core.kind = WorkloadKind::Trace;
                    core.trace = Some(cli.trace[i % cli.trace.len()].clone());
                    core
                })
                .collect();
            workloads.push(Workload {
                name: "trace".into(),
                cores,
            });
        }
        cfg.workloads = workloads;
    }
    cfg.validate()
}

fn run(cli: Cli) -> Result<u8, (u8, String)> {
    let config_err = |e: ConfigFileError| (1, e.to_string());
    let mut cfg = match &cli.config {
        Some(p) => load_config(p).map_err(config_err)?,
        None => SimConfig::default(),
    };
    apply_cli(&mut cfg, &cli).map_err(config_err)?;

    let opts = RunOptions {
        jobs: cli.jobs,
        dumps: Dumps {
            refresh_log: cli.dump_refresh_log.clone(),
            cmd_trace: cli.dump_cmd_trace.clone(),
            latency: cli.dump_latency.clone(),
        },
        check_oracle: cli.check_oracle,
    };
    let out = run_sweep(&cfg, &opts).map_err(|e| (e.exit_code() as u8, e.to_string()))?;

    let results = csv::results_csv(&out.cells);
    match &cli.out {
        Some(p) => {
            let write = |path: &PathBuf, text: &str| {
                std::fs::write(path, text).map_err(|e| (1, format!("{}: {e}", path.display())))
            };
            write(p, &results)?;
            write(&csv::solo_path(p), &csv::solo_csv(&out.solo))?;
        }
        None => print!("{results}"),
    }

    if cfg.densities.len() > 1 {
        eprintln!("note: energy_per_access_pj uses the same IDD currents at every density");
    }

    let mut failed = false;
    for c in out.failures() {
        failed = true;
        if let Some(a) = c.audit.as_ref().filter(|a| !a.passed()) {
            eprintln!(
                "{}: retention audit failed: {} stale rows, max lateness {} cycles",
                c.name(),
                a.stale_total,
                a.max_lateness
            );
        }
        if let Some(v) = c.oracle_violations.filter(|&v| v > 0) {
            eprintln!("{}: timing oracle found {v} violations", c.name());
        }
    }
    Ok(if failed { 3 } else { 0 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err((code, msg)) => {
            eprintln!("simulate: {msg}");
            ExitCode::from(code)
        }
    }
}
