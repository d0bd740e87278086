//! Retention audit over a refresh log.
//!
//! Replays the refresh commands of one channel, advancing a per-bank row
//! counter exactly as the device does, and checks that every row is
//! refreshed at least once per retention window plus the postponement
//! slack. It also measures how late each refresh ran against the policy's
//! nominal slots.

use alloc::vec::Vec;

use crate::engine::{CommandKind, RefreshCosts};
use crate::refresh::{NominalSlots, RefreshLogEntry};
use crate::Cycle;

#[derive(Debug, Clone)]
pub struct AuditSpec {
    pub ranks: u8,
    pub banks: u8,
    pub rows_per_bank: u32,
    pub retention_cycles: Cycle,
    /// Allowed extension of the retention window (8 × tREFIab).
    pub slack: Cycle,
    pub costs: RefreshCosts,
    /// Nominal slots per bank, rank-major; `None` disables the lateness check.
    pub nominal: Vec<Option<NominalSlots>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StaleRow {
    pub rank: u8,
    pub bank: u8,
    pub row: u32,
    /// Longest gap between refreshes (or from time 0 / to the end of the run).
    pub gap: Cycle,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub stale: Vec<StaleRow>,
    /// Rows reported stale beyond the cap on `stale`.
    pub stale_total: u64,
    pub max_lateness: Cycle,
    pub refreshes: u64,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.stale_total == 0
    }

    pub fn merge(&mut self, other: &AuditReport) {
        self.stale.extend_from_slice(&other.stale);
        self.stale_total += other.stale_total;
        self.max_lateness = self.max_lateness.max(other.max_lateness);
        self.refreshes += other.refreshes;
    }
}

const STALE_REPORT_CAP: usize = 1024;

/// Audits the log of one channel covering cycles `0..end`.
pub fn retention_audit(log: &[RefreshLogEntry], spec: &AuditSpec, end: Cycle) -> AuditReport {
    let nbanks = spec.ranks as usize * spec.banks as usize;
    let rows = spec.rows_per_bank as usize;
    let limit = spec.retention_cycles + spec.slack;
    let mut last: Vec<Vec<Cycle>> = alloc::vec![alloc::vec![0; rows]; nbanks];
    let mut worst: Vec<Vec<Cycle>> = alloc::vec![alloc::vec![0; rows]; nbanks];
    let mut done: Vec<u64> = alloc::vec![0; nbanks];
    let mut report = AuditReport::default();

    let due = |slot: usize, n: u64| -> Option<Cycle> {
        spec.nominal[slot].map(|s| s.offset + (n / u64::from(s.rows_per_slot.max(1))) * s.interval)
    };

    for e in log {
        report.refreshes += 1;
        let count = u64::from(spec.costs.rows(e.kind));
        let banks = match e.kind {
            CommandKind::RefPb => e.bank..e.bank + 1,
            _ => 0..spec.banks,
        };
        for b in banks {
            let slot = e.rank as usize * spec.banks as usize + b as usize;
            if let Some(d) = due(slot, done[slot]) {
                report.max_lateness = report.max_lateness.max(e.cycle.saturating_sub(d));
            }
            for k in 0..count {
                let row = ((done[slot] + k) % rows as u64) as usize;
                let gap = e.cycle - last[slot][row];
                worst[slot][row] = worst[slot][row].max(gap);
                last[slot][row] = e.cycle;
            }
            done[slot] += count;
        }
    }

    for slot in 0..nbanks {
        if let Some(d) = due(slot, done[slot]) {
            if d <= end {
                report.max_lateness = report.max_lateness.max(end - d);
            }
        }
        for row in 0..rows {
            let gap = worst[slot][row].max(end.saturating_sub(last[slot][row]));
            if gap > limit {
                report.stale_total += 1;
                if report.stale.len() < STALE_REPORT_CAP {
                    report.stale.push(StaleRow {
                        rank: (slot / spec.banks as usize) as u8,
                        bank: (slot % spec.banks as usize) as u8,
                        row: row as u32,
                        gap,
                    });
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FgrMode;
    use crate::refresh::RefreshClass;

    fn costs() -> RefreshCosts {
        RefreshCosts {
            trfc_ab: [594, 441, 365],
            rows_ab: [8, 4, 2],
            trfc_pb: 258,
            rows_pb: 8,
        }
    }

    fn spec(ranks: u8, banks: u8, rows: u32) -> AuditSpec {
        AuditSpec {
            ranks,
            banks,
            rows_per_bank: rows,
            retention_cycles: 1000,
            slack: 100,
            costs: costs(),
            nominal: alloc::vec![
                Some(NominalSlots {
                    offset: 0,
                    interval: 1000 * 8 / u64::from(rows),
                    rows_per_slot: 8
                });
                ranks as usize * banks as usize
            ],
        }
    }

    fn entry(cycle: Cycle, kind: CommandKind, bank: u8) -> RefreshLogEntry {
        RefreshLogEntry {
            cycle,
            kind,
            rank: 0,
            bank,
            credit_after: 0,
            class: RefreshClass::Nominal,
            during_writeback: false,
        }
    }

    #[test]
    fn on_schedule_log_passes_with_zero_lateness() {
        // 64 rows, 8 per refresh: one refresh per 125 cycles covers the bank
        // once per 1000-cycle window.
        let s = spec(1, 2, 64);
        let mut log = Vec::new();
        for k in 0..40 {
            for b in 0..2 {
                log.push(entry(k * 125, CommandKind::RefPb, b));
            }
        }
        let r = retention_audit(&log, &s, 40 * 125);
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.max_lateness, 0);
    }

    #[test]
    fn missing_bank_is_reported() {
        let s = spec(1, 2, 64);
        let log: Vec<_> = (0..40).map(|k| entry(k * 125, CommandKind::RefPb, 0)).collect();
        let r = retention_audit(&log, &s, 40 * 125);
        assert!(!r.passed());
        assert_eq!(r.stale_total, 64);
        assert!(r.stale.iter().all(|x| x.bank == 1));
    }

    #[test]
    fn late_refresh_measured() {
        let s = spec(1, 1, 64);
        let log = alloc::vec![
            entry(0, CommandKind::RefAb(FgrMode::X1), 0),
            entry(400, CommandKind::RefAb(FgrMode::X1), 0),
        ];
        let r = retention_audit(&log, &s, 400);
        assert_eq!(r.max_lateness, 400 - 125);
    }
}
