//! Subarray-level refresh/access parallelism.
//!
//! The device owns a refresh-subarray counter and a local-row counter per
//! bank and decides which subarray each refresh touches. The controller keeps
//! shadow copies advanced in lock step, so it knows which subarray is busy
//! without asking the device. An access may proceed in a refreshing bank as
//! long as it targets a different subarray and no other subarray of the bank
//! is already driving the global bitlines.

use alloc::vec::Vec;

use crate::{engine::BankState, DramGeometry, EngineError, PolicyKind};

/// Device-side (or shadow) refresh position of one bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SubarrayRefreshCounters {
    pub refresh_subarray: u16,
    pub local_row: u32,
}

impl SubarrayRefreshCounters {
    /// Bank-relative row the next refresh starts at.
    pub fn next_row(&self, geometry: &DramGeometry) -> u32 {
        u32::from(self.refresh_subarray) * geometry.rows_per_subarray() + self.local_row
    }
}

/// Per-subarray activity, derived from bank state for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubarrayPhase {
    Idle,
    ActivatedForAccess,
    ActivatedForRefresh,
}

pub fn subarray_of_row(row: u32, geometry: &DramGeometry) -> Result<u16, EngineError> {
    if row >= geometry.rows_per_bank {
        return Err(EngineError::RowOutOfRange(row));
    }
    Ok((row / geometry.rows_per_subarray()) as u16)
}

/// Advances a counter pair by `rows` refreshed rows, carrying into the
/// subarray counter and wrapping around the bank.
pub fn sarp_refresh_advance(
    counters: SubarrayRefreshCounters,
    rows: u32,
    geometry: &DramGeometry,
) -> SubarrayRefreshCounters {
    let per_sa = geometry.rows_per_subarray();
    let total =
        u64::from(counters.refresh_subarray) * u64::from(per_sa) + u64::from(counters.local_row) + u64::from(rows);
    let total = total % u64::from(geometry.rows_per_bank);
    SubarrayRefreshCounters {
        refresh_subarray: (total / u64::from(per_sa)) as u16,
        local_row: (total % u64::from(per_sa)) as u32,
    }
}

/// Whether a demand access to `row` may activate in `bank`, which is
/// refreshing `refreshing_subarray` (as tracked by the controller's shadow
/// counters).
pub fn access_allowed(row: u32, bank: &BankState, refreshing_subarray: u16, geometry: &DramGeometry) -> bool {
    let Ok(target) = subarray_of_row(row, geometry) else {
        return false;
    };
    if target == refreshing_subarray {
        return false;
    }
    // Only one subarray can be connected to the global bitlines.
    match bank.open_row {
        Some(open) => subarray_of_row(open, geometry).ok() == Some(target) && open == row,
        None => true,
    }
}

/// Per-subarray phases of one bank at cycle `now`.
pub fn subarray_phases(bank: &BankState, geometry: &DramGeometry, now: crate::Cycle) -> Vec<SubarrayPhase> {
    let mut phases = alloc::vec![SubarrayPhase::Idle; geometry.subarrays_per_bank as usize];
    if bank.is_refreshing(now) {
        phases[bank.refreshing_subarray as usize] = SubarrayPhase::ActivatedForRefresh;
    }
    if let Some(row) = bank.open_row {
        phases[(row / geometry.rows_per_subarray()) as usize] = SubarrayPhase::ActivatedForAccess;
    }
    phases
}

/// Banks of a rank that currently admit subarray-parallel access, as a
/// bitmask over bank indices.
///
/// `refreshing` is the bitmask of banks with a refresh in flight. Under
/// SARPab an all-bank refresh makes every bank subarray-restricted; under
/// SARPpb/DSARP only the single refreshing bank is. Without SARP nothing is.
pub fn sarp_mode_banks(policy: PolicyKind, refreshing: u64) -> u64 {
    if policy.uses_sarp() {
        refreshing
    } else {
        0
    }
}
