//! Post-processing: speedup metrics, latency histograms and energy.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::engine::{CommandCounts, CommandKind, RefreshCosts};
use crate::geometry::{CurrentParams, FgrMode, TimingParams};
use crate::refresh::RefreshCounts;
use crate::Cycle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("shared and alone IPC vectors differ in length")]
    LengthMismatch,
    #[error("core {0} has zero alone IPC")]
    ZeroAloneIpc(usize),
    #[error("core {0} has zero shared IPC")]
    ZeroSharedIpc(usize),
    #[error("no cores")]
    Empty,
}

fn check(shared: &[f64], alone: &[f64], need_shared: bool) -> Result<(), MetricError> {
    if shared.len() != alone.len() {
        return Err(MetricError::LengthMismatch);
    }
    if shared.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(i) = alone.iter().position(|&a| !(a > 0.0)) {
        return Err(MetricError::ZeroAloneIpc(i));
    }
    if need_shared {
        if let Some(i) = shared.iter().position(|&s| !(s > 0.0)) {
            return Err(MetricError::ZeroSharedIpc(i));
        }
    }
    Ok(())
}

pub fn weighted_speedup(shared: &[f64], alone: &[f64]) -> Result<f64, MetricError> {
    check(shared, alone, false)?;
    Ok(shared.iter().zip(alone).map(|(s, a)| s / a).sum())
}

pub fn harmonic_speedup(shared: &[f64], alone: &[f64]) -> Result<f64, MetricError> {
    check(shared, alone, true)?;
    let denom: f64 = shared.iter().zip(alone).map(|(s, a)| a / s).sum();
    Ok(shared.len() as f64 / denom)
}

pub fn max_slowdown(shared: &[f64], alone: &[f64]) -> Result<f64, MetricError> {
    check(shared, alone, true)?;
    Ok(shared.iter().zip(alone).map(|(s, a)| a / s).fold(0.0, f64::max))
}

/// Exact latency histogram (cycles → count).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LatencyHistogram {
    bins: BTreeMap<Cycle, u64>,
    total: u64,
    sum: u128,
    max: Cycle,
}

impl LatencyHistogram {
    pub fn record(&mut self, latency: Cycle) {
        *self.bins.entry(latency).or_insert(0) += 1;
        self.total += 1;
        self.sum += u128::from(latency);
        self.max = self.max.max(latency);
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn max(&self) -> Cycle {
        self.max
    }

    pub fn mean(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.sum as f64 / self.total as f64
        }
    }

    pub fn merge(&mut self, other: &LatencyHistogram) {
        for (&k, &v) in &other.bins {
            *self.bins.entry(k).or_insert(0) += v;
        }
        self.total += other.total;
        self.sum += other.sum;
        self.max = self.max.max(other.max);
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cycle, u64)> + '_ {
        self.bins.iter().map(|(&k, &v)| (k, v))
    }
}

/// Everything measured over the measurement window of one run.
#[derive(Debug, Clone, Default)]
pub struct SimStats {
    pub core_retired: Vec<u64>,
    pub core_cycles: Vec<u64>,
    pub channel_commands: Vec<CommandCounts>,
    pub refresh: RefreshCounts,
    pub subarray_conflicts: u64,
    pub refresh_bank_conflicts: u64,
    pub row_hits: u64,
    pub reads_completed: u64,
    pub writes_completed: u64,
    pub read_latency: LatencyHistogram,
    /// Enqueue-to-WR-issue delay of writes (they complete at enqueue).
    pub write_latency: LatencyHistogram,
    pub dram_cycles: Cycle,
    /// Summed over ranks: cycles with at least one open row.
    pub rank_active_cycles: Cycle,
    /// Summed over ranks: cycles with all banks precharged.
    pub rank_precharged_cycles: Cycle,
}

impl SimStats {
    pub fn ipc(&self) -> Vec<f64> {
        self.core_retired
            .iter()
            .zip(&self.core_cycles)
            .map(|(&r, &c)| if c == 0 { 0.0 } else { r as f64 / c as f64 })
            .collect()
    }

    pub fn commands(&self) -> CommandCounts {
        let mut total = CommandCounts::default();
        for c in &self.channel_commands {
            for (t, v) in total.by_kind.iter_mut().zip(c.by_kind) {
                *t += v;
            }
        }
        total
    }

    pub fn accesses(&self) -> u64 {
        self.reads_completed + self.writes_completed
    }
}

/// Energy in picojoules (mA × V × ns).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub background_pj: f64,
    pub activate_precharge_pj: f64,
    pub read_write_pj: f64,
    pub refresh_pj: f64,
    pub total_pj: f64,
    pub per_access_pj: f64,
}

pub fn energy_accumulate(
    stats: &SimStats,
    currents: &CurrentParams,
    timing: &TimingParams,
    costs: &RefreshCosts,
) -> EnergyBreakdown {
    let tck = timing.tck_ns;
    let v = currents.vdd;
    let cmds = stats.commands();
    let n = |k: CommandKind| cmds.get(k) as f64;
    let background = v
        * (currents.i_bg_active * stats.rank_active_cycles as f64
            + currents.i_bg_precharged * stats.rank_precharged_cycles as f64)
        * tck;
    let act = v * currents.i_act * timing.trc as f64 * tck * n(CommandKind::Act);
    let burst = timing.tburst as f64 * tck;
    let rw = v * burst * (currents.i_rd * n(CommandKind::Rd) + currents.i_wr * n(CommandKind::Wr));
    let mut refresh = v * currents.i_ref_pb * costs.trfc_pb as f64 * tck * n(CommandKind::RefPb);
    for mode in FgrMode::ALL {
        refresh += v * currents.i_ref_ab * costs.trfc_ab[mode.index()] as f64 * tck * n(CommandKind::RefAb(mode));
    }
    let total = background + act + rw + refresh;
    let accesses = stats.accesses();
    EnergyBreakdown {
        background_pj: background,
        activate_precharge_pj: act,
        read_write_pj: rw,
        refresh_pj: refresh,
        total_pj: total,
        per_access_pj: if accesses == 0 { 0.0 } else { total / accesses as f64 },
    }
}
