//! CSV result and solo-run sidecar formatting.

use std::fmt::Write;

use crate::runner::{CellReport, SoloRow};

pub const RESULT_HEADER: &str = "policy,density_gbit,workload,seed,ws,hs,max_slowdown,energy_per_access_pj,\
refresh_count,postponed,pulled_in,forced,subarray_conflicts,avg_read_latency_cycles";

pub const SOLO_HEADER: &str = "policy,density_gbit,workload,core,alone_ipc";

pub fn results_csv(cells: &[CellReport]) -> String {
    let mut out = String::new();
    out.push_str(RESULT_HEADER);
    out.push('\n');
    for c in cells {
        let r = &c.row;
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.3},{},{},{},{},{},{:.3}",
            r.policy.name(),
            r.density_gbit,
            r.workload,
            r.seed,
            r.ws,
            r.hs,
            r.max_slowdown,
            r.energy_per_access_pj,
            r.refresh_count,
            r.postponed,
            r.pulled_in,
            r.forced,
            r.subarray_conflicts,
            r.avg_read_latency_cycles
        )
        .expect("writing to a String");
    }
    out
}

pub fn solo_csv(rows: &[SoloRow]) -> String {
    let mut out = String::new();
    out.push_str(SOLO_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6}",
            r.policy.name(),
            r.density_gbit,
            r.workload,
            r.core,
            r.alone_ipc
        )
        .expect("writing to a String");
    }
    out
}

/// `results.csv` → `results.solo.csv`.
pub fn solo_path(out: &std::path::Path) -> std::path::PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    out.with_file_name(format!("{stem}.solo.csv"))
}
