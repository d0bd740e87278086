//! Per-channel memory controller: request queues, write batching, FR-FCFS
//! with a closed-row policy, and command generation at issue time.

use alloc::vec::Vec;

use crate::engine::{ChannelEngine, CommandKind, DramCommand};
use crate::metrics::LatencyHistogram;
use crate::refresh::{ChannelView, RefreshClass, RefreshLogEntry, RefreshScheduler, RefreshTarget};
use crate::sarp::{sarp_refresh_advance, subarray_of_row, SubarrayRefreshCounters};
use crate::workload::{DecodedAddress, ReqKind};
use crate::{ConfigError, Cycle};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueConfig {
    pub read_capacity: usize,
    pub write_capacity: usize,
    pub high_watermark: usize,
    pub low_watermark: usize,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self {
            read_capacity: 64,
            write_capacity: 64,
            high_watermark: 48,
            low_watermark: 32,
        }
    }
}

impl QueueConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.read_capacity == 0 || self.write_capacity == 0 {
            return Err(ConfigError::Geometry("queue capacities must be positive"));
        }
        if self.low_watermark >= self.high_watermark || self.high_watermark > self.write_capacity {
            return Err(ConfigError::Geometry(
                "watermarks must satisfy low < high <= write capacity",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemRequest {
    pub id: u64,
    pub core: u16,
    pub kind: ReqKind,
    pub addr: DecodedAddress,
    pub subarray: u16,
    pub arrival: Cycle,
    pub completion: Option<Cycle>,
    /// This request's own ACT opened its row.
    pub activated: bool,
    conflict_counted: bool,
}

impl MemRequest {
    pub fn new(
        id: u64,
        core: u16,
        kind: ReqKind,
        addr: DecodedAddress,
        arrival: Cycle,
        engine: &ChannelEngine,
    ) -> Result<Self, crate::EngineError> {
        let subarray = subarray_of_row(addr.row, &engine.config().geometry)?;
        Ok(Self {
            id,
            core,
            kind,
            addr,
            subarray,
            arrival,
            completion: None,
            activated: false,
            conflict_counted: false,
        })
    }
}

/// A read whose data returns at `ready`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadCompletion {
    pub id: u64,
    pub core: u16,
    pub ready: Cycle,
}

#[derive(Debug, Clone, Default)]
pub struct ControllerStats {
    pub reads_served: u64,
    pub writes_served: u64,
    pub row_hits: u64,
    /// Requests that found their subarray refreshing (SARP).
    pub subarray_conflicts: u64,
    /// Requests that found their bank refreshing.
    pub refresh_bank_conflicts: u64,
    pub read_latency: LatencyHistogram,
    pub write_latency: LatencyHistogram,
    pub writeback_entries: u64,
    pub min_entry_occupancy: Option<usize>,
    pub max_exit_occupancy: Option<usize>,
    pub backpressure: u64,
}

pub struct ChannelController {
    engine: ChannelEngine,
    policy: RefreshScheduler,
    queues: QueueConfig,
    read_q: Vec<MemRequest>,
    write_q: Vec<MemRequest>,
    writeback: bool,
    demand: Vec<u16>,
    banks_per_rank: usize,
    shadow: Vec<SubarrayRefreshCounters>,
    shadow_refreshing: Vec<u16>,
    shadow_refresh_end: Vec<Cycle>,
    stats: ControllerStats,
    refresh_log: Vec<RefreshLogEntry>,
    cmd_trace: Option<Vec<(DramCommand, Cycle)>>,
    /// Refresh-target blocking for this cycle, per bank: 0 none, 1 whole
    /// bank, 2 only the next refresh subarray.
    blocked: Vec<u8>,
    open_hit: Vec<bool>,
}

impl ChannelController {
    pub fn new(engine: ChannelEngine, policy: RefreshScheduler, queues: QueueConfig) -> Result<Self, ConfigError> {
        queues.validate()?;
        let g = engine.config().geometry;
        let banks = (g.ranks_per_channel * g.banks_per_rank) as usize;
        Ok(Self {
            engine,
            policy,
            queues,
            read_q: Vec::with_capacity(queues.read_capacity),
            write_q: Vec::with_capacity(queues.write_capacity),
            writeback: false,
            demand: alloc::vec![0; banks],
            banks_per_rank: g.banks_per_rank as usize,
            shadow: alloc::vec![SubarrayRefreshCounters::default(); banks],
            shadow_refreshing: alloc::vec![0; banks],
            shadow_refresh_end: alloc::vec![0; banks],
            stats: ControllerStats::default(),
            refresh_log: Vec::new(),
            cmd_trace: None,
            blocked: alloc::vec![0; banks],
            open_hit: alloc::vec![false; banks],
        })
    }

    pub fn record_commands(&mut self, on: bool) {
        self.cmd_trace = if on { Some(Vec::new()) } else { None };
    }

    pub fn command_trace(&self) -> Option<&[(DramCommand, Cycle)]> {
        self.cmd_trace.as_deref()
    }

    pub fn engine(&self) -> &ChannelEngine {
        &self.engine
    }

    pub fn policy(&self) -> &RefreshScheduler {
        &self.policy
    }

    pub fn stats(&self) -> &ControllerStats {
        &self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = ControllerStats::default();
    }

    pub fn refresh_log(&self) -> &[RefreshLogEntry] {
        &self.refresh_log
    }

    pub fn writeback_active(&self) -> bool {
        self.writeback
    }

    pub fn read_queue(&self) -> &[MemRequest] {
        &self.read_q
    }

    pub fn write_queue(&self) -> &[MemRequest] {
        &self.write_q
    }

    pub fn demand(&self) -> &[u16] {
        &self.demand
    }

    /// Controller's mirror of a bank's device refresh counters.
    pub fn shadow_counters(&self, rank: u8, bank: u8) -> SubarrayRefreshCounters {
        self.shadow[self.slot(rank, bank)]
    }

    fn slot(&self, rank: u8, bank: u8) -> usize {
        rank as usize * self.banks_per_rank + bank as usize
    }

    pub fn has_room(&self, kind: ReqKind) -> bool {
        match kind {
            ReqKind::Read => self.read_q.len() < self.queues.read_capacity,
            ReqKind::Write => self.write_q.len() < self.queues.write_capacity,
        }
    }

    pub fn note_backpressure(&mut self) {
        self.stats.backpressure += 1;
    }

    /// Queues a request; `Err` hands it back on backpressure.
    pub fn enqueue(&mut self, req: MemRequest) -> Result<(), MemRequest> {
        let (q, cap) = match req.kind {
            ReqKind::Read => (&mut self.read_q, self.queues.read_capacity),
            ReqKind::Write => (&mut self.write_q, self.queues.write_capacity),
        };
        if q.len() >= cap {
            self.stats.backpressure += 1;
            return Err(req);
        }
        q.push(req);
        let s = self.slot(req.addr.rank, req.addr.bank);
        self.demand[s] += 1;
        if req.kind == ReqKind::Write {
            self.writeback_tick();
        }
        Ok(())
    }

    /// Enters or leaves writeback mode per the watermarks.
    pub fn writeback_tick(&mut self) -> bool {
        let occ = self.write_q.len();
        if !self.writeback && occ >= self.queues.high_watermark {
            self.writeback = true;
            self.stats.writeback_entries += 1;
            self.stats.min_entry_occupancy = Some(self.stats.min_entry_occupancy.map_or(occ, |m| m.min(occ)));
        } else if self.writeback && occ <= self.queues.low_watermark {
            self.writeback = false;
            self.stats.max_exit_occupancy = Some(self.stats.max_exit_occupancy.map_or(occ, |m| m.max(occ)));
        }
        self.writeback
    }

    /// One DRAM cycle. Returns the command issued, if any; read completions
    /// are appended to `done`.
    pub fn tick(&mut self, now: Cycle, done: &mut Vec<ReadCompletion>) -> Option<DramCommand> {
        self.writeback_tick();
        {
            let view = ChannelView {
                now,
                engine: &self.engine,
                demand: &self.demand,
                reads_pending: self.read_q.len(),
                writeback: self.writeback,
            };
            self.policy.tick(&view);
        }
        if let Some(cmd) = self.serve_mandatory(now) {
            return Some(cmd);
        }
        if let Some(cmd) = self.schedule_demand(now, done) {
            return Some(cmd);
        }
        let target = {
            let view = ChannelView {
                now,
                engine: &self.engine,
                demand: &self.demand,
                reads_pending: self.read_q.len(),
                writeback: self.writeback,
            };
            self.policy.opportunistic(&view)
        };
        target.map(|t| self.issue_refresh(&t, None, now))
    }

    fn issue(&mut self, cmd: &DramCommand, now: Cycle) -> crate::engine::IssueOutcome {
        if let Some(trace) = self.cmd_trace.as_mut() {
            trace.push((*cmd, now));
        }
        self.engine.issue(cmd, now)
    }

    fn issue_refresh(&mut self, target: &RefreshTarget, mandatory: Option<usize>, now: Cycle) -> DramCommand {
        let cmd = target.command(self.engine.config().channel);
        self.issue(&cmd, now);
        let costs = *self.engine.costs();
        let rows = costs.rows(cmd.kind);
        let end = now + costs.latency(cmd.kind);
        let banks: Vec<u8> = match target.bank {
            Some(b) => alloc::vec![b],
            None => (0..self.banks_per_rank as u8).collect(),
        };
        let g = self.engine.config().geometry;
        for b in banks {
            let s = self.slot(target.rank, b);
            self.shadow_refreshing[s] = self.shadow[s].refresh_subarray;
            self.shadow[s] = sarp_refresh_advance(self.shadow[s], rows, &g);
            self.shadow_refresh_end[s] = end;
        }
        let entry = self.policy.on_issued(target, mandatory, now);
        self.refresh_log.push(entry);
        cmd
    }

    /// Issues a pending mandatory refresh or a PRE clearing the way for one,
    /// and records which banks demand traffic must keep away from.
    fn serve_mandatory(&mut self, now: Cycle) -> Option<DramCommand> {
        self.blocked.iter_mut().for_each(|b| *b = 0);
        if self.policy.mandatory().is_empty() {
            return None;
        }
        let sarp = self.engine.config().sarp;
        let rps = self.engine.config().geometry.rows_per_subarray();
        let ch = self.engine.config().channel;
        let mut pre: Option<DramCommand> = None;
        // Refreshes at the postponement limit go first, and a rank waiting on
        // one issues nothing else that would occupy it for tRFC.
        let mut held: u64 = 0;
        let n = self.policy.mandatory().len();
        for k in 0..2 * n {
            let (i, urgent_pass) = (k % n, k < n);
            let t = self.policy.mandatory()[i];
            if (t.class == RefreshClass::Forced) != urgent_pass {
                continue;
            }
            let cmd = t.command(ch);
            if held & (1 << t.rank) == 0 && self.engine.check(&cmd, now).is_ok() {
                return Some(self.issue_refresh(&t, Some(i), now));
            }
            if t.class == RefreshClass::Forced {
                held |= 1 << t.rank;
            }
            let banks = match t.bank {
                Some(b) => b..b + 1,
                None => 0..self.banks_per_rank as u8,
            };
            for b in banks {
                let s = self.slot(t.rank, b);
                self.blocked[s] = if sarp { 2 } else { 1 };
                if pre.is_some() {
                    continue;
                }
                let Some(row) = self.engine.bank(t.rank, b).open_row else {
                    continue;
                };
                if sarp && (row / rps) as u16 != self.shadow[s].refresh_subarray {
                    continue;
                }
                let p = DramCommand::pre(ch, t.rank, b);
                if self.engine.check(&p, now).is_ok() {
                    pre = Some(p);
                }
            }
        }
        if let Some(p) = pre {
            self.issue(&p, now);
        }
        pre
    }

    fn is_blocked(&self, r: &MemRequest) -> bool {
        let s = self.slot(r.addr.rank, r.addr.bank);
        match self.blocked[s] {
            0 => false,
            1 => true,
            _ => r.subarray == self.shadow[s].refresh_subarray,
        }
    }

    fn schedule_demand(&mut self, now: Cycle, done: &mut Vec<ReadCompletion>) -> Option<DramCommand> {
        let ch = self.engine.config().channel;
        let g = self.engine.config().geometry;
        let sarp = self.engine.config().sarp;
        let writeback = self.writeback;
        let mut open_hit = core::mem::take(&mut self.open_hit);
        open_hit.iter_mut().for_each(|h| *h = false);
        let mut col: Option<usize> = None;
        let mut act: Option<usize> = None;
        {
            let q = if writeback { &self.write_q } else { &self.read_q };
            for (i, r) in q.iter().enumerate() {
                let s = self.slot(r.addr.rank, r.addr.bank);
                let bank = self.engine.bank(r.addr.rank, r.addr.bank);
                match bank.open_row {
                    Some(row) if row == r.addr.row => {
                        open_hit[s] = true;
                        if col.is_none() && !self.is_blocked(r) {
                            let kind = if writeback { CommandKind::Wr } else { CommandKind::Rd };
                            let cmd =
                                DramCommand::column(kind, ch, r.addr.rank, r.addr.bank, r.addr.row, r.addr.column, &g);
                            if self.engine.check(&cmd, now).is_ok() {
                                col = Some(i);
                            }
                        }
                    }
                    Some(_) => {}
                    None => {
                        if act.is_none() && col.is_none() && !self.is_blocked(r) {
                            let cmd = DramCommand::act(ch, r.addr.rank, r.addr.bank, r.addr.row, &g);
                            if self.engine.check(&cmd, now).is_ok() {
                                act = Some(i);
                            }
                        }
                    }
                }
            }
        }
        self.count_conflicts(now, sarp);
        let result = self.issue_demand(now, col, act, &open_hit, done);
        self.open_hit = open_hit;
        result
    }

    fn issue_demand(
        &mut self,
        now: Cycle,
        col: Option<usize>,
        act: Option<usize>,
        open_hit: &[bool],
        done: &mut Vec<ReadCompletion>,
    ) -> Option<DramCommand> {
        let ch = self.engine.config().channel;
        let g = self.engine.config().geometry;
        let writeback = self.writeback;
        if let Some(i) = col {
            let r = if writeback {
                self.write_q.remove(i)
            } else {
                self.read_q.remove(i)
            };
            let kind = if writeback { CommandKind::Wr } else { CommandKind::Rd };
            let cmd = DramCommand::column(kind, ch, r.addr.rank, r.addr.bank, r.addr.row, r.addr.column, &g);
            let out = self.issue(&cmd, now);
            let s = self.slot(r.addr.rank, r.addr.bank);
            self.demand[s] -= 1;
            if !r.activated {
                self.stats.row_hits += 1;
            }
            match r.kind {
                ReqKind::Read => {
                    let ready = out.data_ready.expect("read returns data");
                    self.stats.reads_served += 1;
                    self.stats.read_latency.record(ready - r.arrival);
                    done.push(ReadCompletion {
                        id: r.id,
                        core: r.core,
                        ready,
                    });
                }
                ReqKind::Write => {
                    self.stats.writes_served += 1;
                    self.stats.write_latency.record(now - r.arrival);
                }
            }
            return Some(cmd);
        }
        if let Some(i) = act {
            let q = if writeback { &mut self.write_q } else { &mut self.read_q };
            q[i].activated = true;
            let r = q[i];
            let cmd = DramCommand::act(ch, r.addr.rank, r.addr.bank, r.addr.row, &g);
            self.issue(&cmd, now);
            return Some(cmd);
        }
        // Closed-row: precharge open rows nothing in the active queue wants.
        for rank in 0..g.ranks_per_channel as u8 {
            for bank in 0..self.banks_per_rank as u8 {
                let s = self.slot(rank, bank);
                if open_hit[s] || self.engine.bank(rank, bank).open_row.is_none() {
                    continue;
                }
                let cmd = DramCommand::pre(ch, rank, bank);
                if self.engine.check(&cmd, now).is_ok() {
                    self.issue(&cmd, now);
                    return Some(cmd);
                }
            }
        }
        None
    }

    /// Counts, once per request, demand that arrived at a refreshing bank
    /// (and, under SARP, at its refreshing subarray) while waiting to activate.
    fn count_conflicts(&mut self, now: Cycle, sarp: bool) {
        let q = if self.writeback {
            &mut self.write_q
        } else {
            &mut self.read_q
        };
        for r in q.iter_mut() {
            if r.conflict_counted || r.activated {
                continue;
            }
            let s = r.addr.rank as usize * self.banks_per_rank + r.addr.bank as usize;
            if now >= self.shadow_refresh_end[s] {
                continue;
            }
            r.conflict_counted = true;
            self.stats.refresh_bank_conflicts += 1;
            if sarp && r.subarray == self.shadow_refreshing[s] {
                self.stats.subarray_conflicts += 1;
            }
        }
    }
}
