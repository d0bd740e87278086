//! Brute-force re-validation of a command history.
//!
//! Written independently of [`crate::engine`]: no gates and no running bank
//! state. Each command is checked against the earlier commands it could
//! conflict with, looked up by scanning the history. The only derived index
//! is the per-bank count of rows refreshed so far, which stands in for the
//! device's refresh counter.

use alloc::vec::Vec;

use crate::engine::{CommandKind, Constraint, DramCommand, EngineConfig, RefreshCosts};
use crate::Cycle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    /// Index of the offending command in the history.
    pub index: usize,
    pub cycle: Cycle,
    pub rule: Constraint,
    /// Earlier command the rule was checked against, if any.
    pub against: Option<usize>,
}

struct Ctx<'a> {
    cfg: &'a EngineConfig,
    costs: RefreshCosts,
    history: &'a [(DramCommand, Cycle)],
    horizon: Cycle,
    /// Per (channel, rank, bank): indices of ACT/PRE commands, ascending.
    row_cmds: Vec<Vec<usize>>,
    /// Per (channel, rank, bank): (index, rows refreshed before it) for each
    /// refresh touching the bank.
    refreshes: Vec<Vec<(usize, u64)>>,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a EngineConfig, history: &'a [(DramCommand, Cycle)]) -> Self {
        let g = &cfg.geometry;
        let t = &cfg.timing;
        let costs = RefreshCosts::new(g, t, cfg.retention_ms);
        let max_trfc = costs.trfc_ab.iter().copied().max().unwrap_or(0).max(costs.trfc_pb);
        let horizon = [
            t.trc,
            t.tras,
            t.trcd,
            t.trp,
            t.trtp,
            t.tcwl + t.tburst + t.twr,
            t.tcwl + t.tburst + t.twtr,
            t.trtw,
            t.tburst,
            t.trrd_ref,
            t.tfaw_ref,
            max_trfc,
        ]
        .into_iter()
        .max()
        .unwrap_or(0)
            + 1;

        let banks = (g.channels * g.ranks_per_channel * g.banks_per_rank) as usize;
        let mut row_cmds = alloc::vec![Vec::new(); banks];
        let mut refreshes = alloc::vec![Vec::new(); banks];
        let mut rows_done = alloc::vec![0u64; banks];
        let mut ctx = Self {
            cfg,
            costs,
            history,
            horizon,
            row_cmds: Vec::new(),
            refreshes: Vec::new(),
        };
        for (i, (cmd, _)) in history.iter().enumerate() {
            match cmd.kind {
                CommandKind::Act | CommandKind::Pre => row_cmds[ctx.bank_slot(cmd, cmd.bank)].push(i),
                CommandKind::RefPb => {
                    let s = ctx.bank_slot(cmd, cmd.bank);
                    refreshes[s].push((i, rows_done[s]));
                    rows_done[s] += u64::from(ctx.costs.rows(cmd.kind));
                }
                CommandKind::RefAb(_) => {
                    for b in 0..g.banks_per_rank as u8 {
                        let s = ctx.bank_slot(cmd, b);
                        refreshes[s].push((i, rows_done[s]));
                        rows_done[s] += u64::from(ctx.costs.rows(cmd.kind));
                    }
                }
                _ => {}
            }
        }
        ctx.row_cmds = row_cmds;
        ctx.refreshes = refreshes;
        ctx
    }

    fn bank_slot(&self, cmd: &DramCommand, bank: u8) -> usize {
        let g = &self.cfg.geometry;
        ((cmd.channel as u32 * g.ranks_per_channel + cmd.rank as u32) * g.banks_per_rank + bank as u32) as usize
    }

    /// Most recent ACT or PRE to the bank before `index`.
    fn last_row_cmd(&self, slot: usize, index: usize) -> Option<usize> {
        let list = &self.row_cmds[slot];
        let pos = list.partition_point(|&j| j < index);
        pos.checked_sub(1).map(|p| list[p])
    }

    /// Subarray refreshed by refresh command `index` in the bank at `slot`.
    fn refresh_subarray(&self, slot: usize, index: usize) -> u16 {
        let g = &self.cfg.geometry;
        let list = &self.refreshes[slot];
        let pos = list.partition_point(|&(j, _)| j < index);
        let rows_before = list[pos].1;
        ((rows_before % u64::from(g.rows_per_bank)) / u64::from(g.rows_per_subarray())) as u16
    }

    fn covers(refresh: &DramCommand, rank: u8, bank: u8) -> bool {
        refresh.rank == rank
            && match refresh.kind {
                CommandKind::RefAb(_) => true,
                CommandKind::RefPb => refresh.bank == bank,
                _ => false,
            }
    }

    /// Earlier commands on the same channel within the constraint horizon,
    /// most recent first.
    fn window(&self, index: usize) -> impl Iterator<Item = (usize, &'a DramCommand, Cycle)> + '_ {
        let (cmd, now) = self.history[index];
        let history = self.history;
        let horizon = self.horizon;
        (0..index)
            .rev()
            .map(move |j| (j, &history[j].0, history[j].1))
            .take_while(move |&(_, _, t)| now.saturating_sub(t) <= horizon)
            .filter(move |&(_, c, _)| c.channel == cmd.channel)
    }

    fn check(&self, index: usize, out: &mut Vec<Violation>) {
        let (cmd, now) = self.history[index];
        let t = &self.cfg.timing;
        let g = &self.cfg.geometry;
        let sarp = self.cfg.sarp;
        let mut flag = |rule: Constraint, against: Option<usize>| {
            out.push(Violation {
                index,
                cycle: now,
                rule,
                against,
            })
        };

        for (j, _, tj) in self.window(index) {
            if tj == now {
                flag(Constraint::CommandBus, Some(j));
            }
        }

        let in_progress = |j: usize, c: &DramCommand, tj: Cycle| -> bool {
            c.kind.is_refresh() && tj <= now && now < tj + self.costs.latency(c.kind) && j != index
        };
        let rank_refreshing = self
            .window(index)
            .any(|(j, c, tj)| c.rank == cmd.rank && in_progress(j, c, tj));

        match cmd.kind {
            CommandKind::Act => {
                let slot = self.bank_slot(&cmd, cmd.bank);
                if let Some(j) = self.last_row_cmd(slot, index) {
                    if self.history[j].0.kind == CommandKind::Act {
                        flag(Constraint::BankOpen, Some(j));
                    }
                }
                let (trrd, tfaw) = if rank_refreshing {
                    (t.trrd_ref, t.tfaw_ref)
                } else {
                    (t.trrd, t.tfaw)
                };
                let mut recent_acts = 0;
                for (j, c, tj) in self.window(index) {
                    if c.rank != cmd.rank {
                        continue;
                    }
                    let gap = now - tj;
                    let same_bank = c.bank == cmd.bank;
                    match c.kind {
                        CommandKind::Act => {
                            if same_bank && gap < t.trc {
                                flag(Constraint::TRc, Some(j));
                            }
                            if gap < trrd {
                                flag(Constraint::TRrd, Some(j));
                            }
                            if gap < tfaw {
                                recent_acts += 1;
                            }
                        }
                        CommandKind::Pre if same_bank && gap < t.trp => flag(Constraint::TRp, Some(j)),
                        k if k.is_refresh() && Self::covers(c, cmd.rank, cmd.bank) && in_progress(j, c, tj) => {
                            if !sarp {
                                flag(Constraint::Refreshing, Some(j));
                            } else if self.refresh_subarray(slot, j) == cmd.subarray {
                                flag(Constraint::SubarrayConflict, Some(j));
                            }
                        }
                        _ => {}
                    }
                }
                if recent_acts >= 4 {
                    flag(Constraint::TFaw, None);
                }
            }
            CommandKind::Pre => {
                let slot = self.bank_slot(&cmd, cmd.bank);
                let last = self.last_row_cmd(slot, index);
                match last {
                    Some(j) if self.history[j].0.kind == CommandKind::Act => {}
                    other => {
                        flag(Constraint::BankClosed, other);
                        return;
                    }
                }
                for (j, c, tj) in self.window(index) {
                    if c.rank != cmd.rank || c.bank != cmd.bank {
                        continue;
                    }
                    let gap = now - tj;
                    match c.kind {
                        CommandKind::Act if gap < t.tras => flag(Constraint::TRas, Some(j)),
                        CommandKind::Rd if gap < t.trtp => flag(Constraint::TRtp, Some(j)),
                        CommandKind::Wr if gap < t.tcwl + t.tburst + t.twr => flag(Constraint::TWr, Some(j)),
                        _ => {}
                    }
                }
            }
            CommandKind::Rd | CommandKind::Wr => {
                let slot = self.bank_slot(&cmd, cmd.bank);
                match self.last_row_cmd(slot, index) {
                    Some(j) if self.history[j].0.kind == CommandKind::Act => {
                        let (act, ta) = self.history[j];
                        if act.row != cmd.row {
                            flag(Constraint::RowMiss, Some(j));
                        } else if now - ta < t.trcd {
                            flag(Constraint::TRcd, Some(j));
                        }
                    }
                    other => flag(Constraint::BankClosed, other),
                }
                for (j, c, tj) in self.window(index) {
                    let gap = now - tj;
                    match (c.kind, cmd.kind) {
                        (CommandKind::Rd, CommandKind::Rd) | (CommandKind::Wr, CommandKind::Wr) if gap < t.tburst => {
                            flag(Constraint::TCcd, Some(j))
                        }
                        (CommandKind::Wr, CommandKind::Rd) if gap < t.tcwl + t.tburst + t.twtr => {
                            flag(Constraint::TWtr, Some(j))
                        }
                        (CommandKind::Rd, CommandKind::Wr) if gap < t.trtw => flag(Constraint::TRtw, Some(j)),
                        _ => {}
                    }
                }
            }
            CommandKind::RefPb | CommandKind::RefAb(_) => {
                let banks: Vec<u8> = if cmd.kind == CommandKind::RefPb {
                    alloc::vec![cmd.bank]
                } else {
                    (0..g.banks_per_rank as u8).collect()
                };
                for (j, c, tj) in self.window(index) {
                    if c.rank != cmd.rank {
                        continue;
                    }
                    if in_progress(j, c, tj) {
                        let same_bank = banks.iter().any(|&b| Self::covers(c, cmd.rank, b));
                        if cmd.kind == CommandKind::RefPb && same_bank {
                            flag(Constraint::Refreshing, Some(j));
                        } else {
                            flag(Constraint::RefreshOverlap, Some(j));
                        }
                    }
                    if c.kind == CommandKind::Pre && banks.contains(&c.bank) && now - tj < t.trp {
                        flag(Constraint::TRp, Some(j));
                    }
                }
                for &b in &banks {
                    let slot = self.bank_slot(&cmd, b);
                    let Some(j) = self.last_row_cmd(slot, index) else {
                        continue;
                    };
                    let (last, _) = self.history[j];
                    if last.kind != CommandKind::Act {
                        continue;
                    }
                    if !sarp {
                        flag(
                            if cmd.kind == CommandKind::RefPb {
                                Constraint::BankOpen
                            } else {
                                Constraint::RankNotPrecharged
                            },
                            Some(j),
                        );
                    } else if last.subarray == self.refresh_subarray(slot, index) {
                        flag(Constraint::SubarrayConflict, Some(j));
                    }
                }
            }
        }
    }
}

/// Every violation in `history` (which must be sorted by cycle).
pub fn oracle_check(cfg: &EngineConfig, history: &[(DramCommand, Cycle)]) -> Vec<Violation> {
    let ctx = Ctx::new(cfg, history);
    let mut out = Vec::new();
    for i in 0..history.len() {
        ctx.check(i, &mut out);
    }
    out
}

/// Violations attributed to the last command of `history` only.
pub fn oracle_check_last(cfg: &EngineConfig, history: &[(DramCommand, Cycle)]) -> Vec<Violation> {
    let mut out = Vec::new();
    if let Some(last) = history.len().checked_sub(1) {
        Ctx::new(cfg, history).check(last, &mut out);
    }
    out
}
