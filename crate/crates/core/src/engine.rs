//! Per-channel command timing engine.
//!
//! The engine holds bank, rank and channel state and answers whether a
//! command may issue at a given cycle. Every constraint is kept as an
//! earliest-legal-cycle "gate" tagged with the constraint that set it, so a
//! rejection names the rule it tripped.

use alloc::vec::Vec;
use core::fmt;

use crate::geometry::{rows_per_refresh, DramGeometry, FgrMode, TimingParams};
use crate::sarp::{sarp_refresh_advance, subarray_of_row, SubarrayRefreshCounters};
use crate::{ConfigError, Cycle, EngineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandKind {
    Act,
    Pre,
    Rd,
    Wr,
    RefAb(FgrMode),
    RefPb,
}

impl CommandKind {
    pub const ALL: [CommandKind; 8] = [
        CommandKind::Act,
        CommandKind::Pre,
        CommandKind::Rd,
        CommandKind::Wr,
        CommandKind::RefAb(FgrMode::X1),
        CommandKind::RefAb(FgrMode::X2),
        CommandKind::RefAb(FgrMode::X4),
        CommandKind::RefPb,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            CommandKind::Act => "ACT",
            CommandKind::Pre => "PRE",
            CommandKind::Rd => "RD",
            CommandKind::Wr => "WR",
            CommandKind::RefAb(FgrMode::X1) => "REFab",
            CommandKind::RefAb(FgrMode::X2) => "REFab2x",
            CommandKind::RefAb(FgrMode::X4) => "REFab4x",
            CommandKind::RefPb => "REFpb",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.mnemonic() == s)
    }

    pub fn is_refresh(self) -> bool {
        matches!(self, CommandKind::RefAb(_) | CommandKind::RefPb)
    }

    pub fn index(self) -> usize {
        match self {
            CommandKind::Act => 0,
            CommandKind::Pre => 1,
            CommandKind::Rd => 2,
            CommandKind::Wr => 3,
            CommandKind::RefAb(m) => 4 + m.index(),
            CommandKind::RefPb => 7,
        }
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// A DRAM command. Fields a kind does not use are zero: REFab carries only
/// the rank, REFpb the rank and bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DramCommand {
    pub kind: CommandKind,
    pub channel: u8,
    pub rank: u8,
    pub bank: u8,
    pub subarray: u16,
    pub row: u32,
    pub column: u16,
}

impl DramCommand {
    fn bare(kind: CommandKind, channel: u8, rank: u8, bank: u8) -> Self {
        Self {
            kind,
            channel,
            rank,
            bank,
            subarray: 0,
            row: 0,
            column: 0,
        }
    }

    pub fn act(channel: u8, rank: u8, bank: u8, row: u32, geometry: &DramGeometry) -> Self {
        Self {
            subarray: (row / geometry.rows_per_subarray()) as u16,
            row,
            ..Self::bare(CommandKind::Act, channel, rank, bank)
        }
    }

    pub fn pre(channel: u8, rank: u8, bank: u8) -> Self {
        Self::bare(CommandKind::Pre, channel, rank, bank)
    }

    pub fn column(
        kind: CommandKind,
        channel: u8,
        rank: u8,
        bank: u8,
        row: u32,
        column: u16,
        geometry: &DramGeometry,
    ) -> Self {
        debug_assert!(matches!(kind, CommandKind::Rd | CommandKind::Wr));
        Self {
            subarray: (row / geometry.rows_per_subarray()) as u16,
            row,
            column,
            ..Self::bare(kind, channel, rank, bank)
        }
    }

    pub fn ref_ab(channel: u8, rank: u8, mode: FgrMode) -> Self {
        Self::bare(CommandKind::RefAb(mode), channel, rank, 0)
    }

    pub fn ref_pb(channel: u8, rank: u8, bank: u8) -> Self {
        Self::bare(CommandKind::RefPb, channel, rank, bank)
    }
}

/// A timing or state rule that keeps a command from issuing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constraint {
    CommandBus,
    BankOpen,
    BankClosed,
    RowMiss,
    Refreshing,
    SubarrayConflict,
    RefreshOverlap,
    RankNotPrecharged,
    TRcd,
    TRp,
    TRc,
    TRas,
    TRtp,
    TWr,
    TRrd,
    TFaw,
    TCcd,
    TWtr,
    TRtw,
}

impl Constraint {
    pub fn name(self) -> &'static str {
        match self {
            Constraint::CommandBus => "command-bus",
            Constraint::BankOpen => "bank-open",
            Constraint::BankClosed => "bank-closed",
            Constraint::RowMiss => "row-miss",
            Constraint::Refreshing => "bank-refreshing",
            Constraint::SubarrayConflict => "subarray-conflict",
            Constraint::RefreshOverlap => "refresh-overlap",
            Constraint::RankNotPrecharged => "rank-not-precharged",
            Constraint::TRcd => "tRCD",
            Constraint::TRp => "tRP",
            Constraint::TRc => "tRC",
            Constraint::TRas => "tRAS",
            Constraint::TRtp => "tRTP",
            Constraint::TWr => "tWR",
            Constraint::TRrd => "tRRD",
            Constraint::TFaw => "tFAW",
            Constraint::TCcd => "tCCD",
            Constraint::TWtr => "tWTR",
            Constraint::TRtw => "tRTW",
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Gate {
    at: Cycle,
    why: Option<Constraint>,
}

impl Gate {
    fn raise(&mut self, at: Cycle, why: Constraint) {
        if at > self.at {
            self.at = at;
            self.why = Some(why);
        }
    }

    fn check(&self, now: Cycle) -> Result<(), Constraint> {
        match self.why {
            Some(why) if now < self.at => Err(why),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankPhase {
    Precharged,
    Activating,
    RowOpen,
    Precharging,
    Refreshing,
}

#[derive(Debug, Clone, Default)]
pub struct BankState {
    pub open_row: Option<u32>,
    /// First cycle after the current (or last) refresh.
    pub refresh_end: Cycle,
    /// Subarray the current (or last) refresh operates on.
    pub refreshing_subarray: u16,
    /// Device refresh position for the next refresh.
    pub counters: SubarrayRefreshCounters,
    act_gate: Gate,
    pre_gate: Gate,
    col_gate: Gate,
    ref_gate: Gate,
}

impl BankState {
    pub fn is_refreshing(&self, now: Cycle) -> bool {
        now < self.refresh_end
    }

    pub fn phase(&self, now: Cycle) -> BankPhase {
        if self.is_refreshing(now) && self.open_row.is_none() {
            BankPhase::Refreshing
        } else if self.open_row.is_some() {
            if now < self.col_gate.at {
                BankPhase::Activating
            } else {
                BankPhase::RowOpen
            }
        } else if now < self.act_gate.at {
            BankPhase::Precharging
        } else {
            BankPhase::Precharged
        }
    }
}

#[derive(Debug, Clone)]
struct RankState {
    banks: Vec<BankState>,
    /// Ring of the last four ACT cycles; `acts[act_head]` is the oldest once full.
    acts: [Cycle; 4],
    act_head: usize,
    act_count: usize,
    last_act: Option<Cycle>,
    refresh_end: Cycle,
    open_banks: u32,
    active_since: Cycle,
    active_cycles: Cycle,
}

impl RankState {
    fn new(banks: usize) -> Self {
        Self {
            banks: alloc::vec![BankState::default(); banks],
            acts: [0; 4],
            act_head: 0,
            act_count: 0,
            last_act: None,
            refresh_end: 0,
            open_banks: 0,
            active_since: 0,
            active_cycles: 0,
        }
    }

    fn record_act(&mut self, now: Cycle) {
        if self.act_count < 4 {
            self.acts[(self.act_head + self.act_count) % 4] = now;
            self.act_count += 1;
        } else {
            self.acts[self.act_head] = now;
            self.act_head = (self.act_head + 1) % 4;
        }
        self.last_act = Some(now);
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub channel: u8,
    pub geometry: DramGeometry,
    pub timing: TimingParams,
    /// Admit accesses to idle subarrays of refreshing banks.
    pub sarp: bool,
    pub retention_ms: f64,
}

/// Latency and rows covered for every refresh command kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefreshCosts {
    pub trfc_ab: [Cycle; 3],
    pub rows_ab: [u32; 3],
    pub trfc_pb: Cycle,
    pub rows_pb: u32,
}

impl RefreshCosts {
    pub fn new(geometry: &DramGeometry, timing: &TimingParams, retention_ms: f64) -> Self {
        let mut trfc_ab = [0; 3];
        let mut rows_ab = [0; 3];
        for mode in FgrMode::ALL {
            trfc_ab[mode.index()] = timing.trfc_ab_for(mode);
            rows_ab[mode.index()] = rows_per_refresh(geometry, retention_ms, timing.trefi_ab_for(mode), timing.tck_ns);
        }
        // Every bank sees one REFpb per all-bank interval.
        let rows_pb = rows_per_refresh(geometry, retention_ms, timing.trefi_ab_for(FgrMode::X1), timing.tck_ns);
        Self {
            trfc_ab,
            rows_ab,
            trfc_pb: timing.trfc_pb,
            rows_pb,
        }
    }

    pub fn latency(&self, kind: CommandKind) -> Cycle {
        match kind {
            CommandKind::RefAb(m) => self.trfc_ab[m.index()],
            CommandKind::RefPb => self.trfc_pb,
            _ => 0,
        }
    }

    pub fn rows(&self, kind: CommandKind) -> u32 {
        match kind {
            CommandKind::RefAb(m) => self.rows_ab[m.index()],
            CommandKind::RefPb => self.rows_pb,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommandCounts {
    pub by_kind: [u64; 8],
}

impl CommandCounts {
    pub fn get(&self, kind: CommandKind) -> u64 {
        self.by_kind[kind.index()]
    }

    pub fn refreshes(&self) -> u64 {
        self.by_kind[4..].iter().sum()
    }
}

/// What issuing a command did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IssueOutcome {
    /// Cycle the read burst has fully returned.
    pub data_ready: Option<Cycle>,
    /// Subarray a refresh command operates on (per bank for REFab; all banks
    /// of a rank share the counter position under all-bank refresh).
    pub refresh_subarray: Option<u16>,
}

#[derive(Debug, Clone)]
pub struct ChannelEngine {
    cfg: EngineConfig,
    costs: RefreshCosts,
    ranks: Vec<RankState>,
    rd_gate: Gate,
    wr_gate: Gate,
    last_cmd: Option<Cycle>,
    counts: CommandCounts,
}

impl ChannelEngine {
    pub fn new(cfg: EngineConfig) -> Result<Self, ConfigError> {
        cfg.geometry.validate()?;
        cfg.timing.validate()?;
        let costs = RefreshCosts::new(&cfg.geometry, &cfg.timing, cfg.retention_ms);
        let ranks = (0..cfg.geometry.ranks_per_channel)
            .map(|_| RankState::new(cfg.geometry.banks_per_rank as usize))
            .collect();
        Ok(Self {
            cfg,
            costs,
            ranks,
            rd_gate: Gate::default(),
            wr_gate: Gate::default(),
            last_cmd: None,
            counts: CommandCounts::default(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn costs(&self) -> &RefreshCosts {
        &self.costs
    }

    pub fn counts(&self) -> &CommandCounts {
        &self.counts
    }

    pub fn bank(&self, rank: u8, bank: u8) -> &BankState {
        &self.ranks[rank as usize].banks[bank as usize]
    }

    pub fn rank_refreshing(&self, rank: u8, now: Cycle) -> bool {
        now < self.ranks[rank as usize].refresh_end
    }

    /// Bitmask of banks in `rank` with a refresh in flight.
    pub fn refreshing_mask(&self, rank: u8, now: Cycle) -> u64 {
        let r = &self.ranks[rank as usize];
        if now >= r.refresh_end {
            return 0;
        }
        r.banks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_refreshing(now))
            .fold(0, |m, (i, _)| m | (1 << i))
    }

    /// Cycles during which at least one bank of `rank` had an open row, up to `now`.
    pub fn active_cycles(&self, rank: u8, now: Cycle) -> Cycle {
        let r = &self.ranks[rank as usize];
        let open = if r.open_banks > 0 {
            now.saturating_sub(r.active_since)
        } else {
            0
        };
        r.active_cycles + open
    }

    /// Structural validation: address fields within geometry.
    pub fn validate(&self, cmd: &DramCommand) -> Result<(), EngineError> {
        let g = &self.cfg.geometry;
        if cmd.channel != self.cfg.channel {
            return Err(EngineError::WrongChannel {
                got: cmd.channel,
                owns: self.cfg.channel,
            });
        }
        if u32::from(cmd.rank) >= g.ranks_per_channel {
            return Err(EngineError::RankOutOfRange(cmd.rank));
        }
        if u32::from(cmd.bank) >= g.banks_per_rank {
            return Err(EngineError::BankOutOfRange(cmd.bank));
        }
        if matches!(cmd.kind, CommandKind::Act | CommandKind::Rd | CommandKind::Wr) {
            let sa = subarray_of_row(cmd.row, g)?;
            if sa != cmd.subarray {
                return Err(EngineError::SubarrayMismatch {
                    subarray: cmd.subarray,
                    row: cmd.row,
                });
            }
        }
        if u32::from(cmd.column) >= g.columns_per_row {
            return Err(EngineError::ColumnOutOfRange(cmd.column));
        }
        Ok(())
    }

    /// `Ok(Ok(()))` when `cmd` may issue at `now`, `Ok(Err(rule))` naming the
    /// first violated rule otherwise, `Err` for a malformed command.
    pub fn is_issuable(&self, cmd: &DramCommand, now: Cycle) -> Result<Result<(), Constraint>, EngineError> {
        self.validate(cmd)?;
        Ok(self.check(cmd, now))
    }

    /// Legality check for a command already known to be well formed.
    pub fn check(&self, cmd: &DramCommand, now: Cycle) -> Result<(), Constraint> {
        if self.last_cmd == Some(now) {
            return Err(Constraint::CommandBus);
        }
        let t = &self.cfg.timing;
        let rank = &self.ranks[cmd.rank as usize];
        let bank = &rank.banks[cmd.bank as usize];
        match cmd.kind {
            CommandKind::Act => {
                if bank.open_row.is_some() {
                    return Err(Constraint::BankOpen);
                }
                if bank.is_refreshing(now) {
                    if !self.cfg.sarp {
                        return Err(Constraint::Refreshing);
                    }
                    if cmd.subarray == bank.refreshing_subarray {
                        return Err(Constraint::SubarrayConflict);
                    }
                }
                bank.act_gate.check(now)?;
                let (trrd, tfaw) = if now < rank.refresh_end {
                    (t.trrd_ref, t.tfaw_ref)
                } else {
                    (t.trrd, t.tfaw)
                };
                if let Some(last) = rank.last_act {
                    if now < last + trrd {
                        return Err(Constraint::TRrd);
                    }
                }
                if rank.act_count == 4 && now < rank.acts[rank.act_head] + tfaw {
                    return Err(Constraint::TFaw);
                }
                Ok(())
            }
            CommandKind::Pre => {
                if bank.open_row.is_none() {
                    return Err(Constraint::BankClosed);
                }
                bank.pre_gate.check(now)
            }
            CommandKind::Rd | CommandKind::Wr => {
                match bank.open_row {
                    None => return Err(Constraint::BankClosed),
                    Some(r) if r != cmd.row => return Err(Constraint::RowMiss),
                    Some(_) => {}
                }
                bank.col_gate.check(now)?;
                if cmd.kind == CommandKind::Rd {
                    self.rd_gate.check(now)
                } else {
                    self.wr_gate.check(now)
                }
            }
            CommandKind::RefPb => {
                if bank.is_refreshing(now) {
                    return Err(Constraint::Refreshing);
                }
                if now < rank.refresh_end {
                    return Err(Constraint::RefreshOverlap);
                }
                self.check_refresh_target(bank)?;
                bank.ref_gate.check(now)
            }
            CommandKind::RefAb(_) => {
                if now < rank.refresh_end {
                    return Err(Constraint::RefreshOverlap);
                }
                for b in &rank.banks {
                    self.check_refresh_target(b).map_err(|c| match c {
                        Constraint::BankOpen => Constraint::RankNotPrecharged,
                        other => other,
                    })?;
                    b.ref_gate.check(now)?;
                }
                Ok(())
            }
        }
    }

    fn check_refresh_target(&self, bank: &BankState) -> Result<(), Constraint> {
        match bank.open_row {
            None => Ok(()),
            Some(_) if !self.cfg.sarp => Err(Constraint::BankOpen),
            Some(row) => {
                if (row / self.cfg.geometry.rows_per_subarray()) as u16 == bank.counters.refresh_subarray {
                    Err(Constraint::SubarrayConflict)
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Applies a command. Issuing an illegal command is a simulator bug and panics.
    pub fn issue(&mut self, cmd: &DramCommand, now: Cycle) -> IssueOutcome {
        if let Err(rule) = self.check(cmd, now) {
            panic!("illegal command {cmd:?} at cycle {now}: violates {rule}");
        }
        self.last_cmd = Some(now);
        self.counts.by_kind[cmd.kind.index()] += 1;
        let t = &self.cfg.timing;
        let g = self.cfg.geometry;
        let sarp = self.cfg.sarp;
        let rank = &mut self.ranks[cmd.rank as usize];
        let mut outcome = IssueOutcome::default();
        match cmd.kind {
            CommandKind::Act => {
                let bank = &mut rank.banks[cmd.bank as usize];
                bank.open_row = Some(cmd.row);
                bank.act_gate.raise(now + t.trc, Constraint::TRc);
                bank.pre_gate.raise(now + t.tras, Constraint::TRas);
                bank.col_gate.raise(now + t.trcd, Constraint::TRcd);
                rank.record_act(now);
                if rank.open_banks == 0 {
                    rank.active_since = now;
                }
                rank.open_banks += 1;
            }
            CommandKind::Pre => {
                let bank = &mut rank.banks[cmd.bank as usize];
                bank.open_row = None;
                bank.act_gate.raise(now + t.trp, Constraint::TRp);
                bank.ref_gate.raise(now + t.trp, Constraint::TRp);
                rank.open_banks -= 1;
                if rank.open_banks == 0 {
                    rank.active_cycles += now - rank.active_since;
                }
            }
            CommandKind::Rd => {
                let bank = &mut rank.banks[cmd.bank as usize];
                bank.pre_gate.raise(now + t.trtp, Constraint::TRtp);
                self.rd_gate.raise(now + t.tburst, Constraint::TCcd);
                self.wr_gate.raise(now + t.trtw, Constraint::TRtw);
                outcome.data_ready = Some(now + t.tcl + t.tburst);
            }
            CommandKind::Wr => {
                let bank = &mut rank.banks[cmd.bank as usize];
                bank.pre_gate.raise(now + t.tcwl + t.tburst + t.twr, Constraint::TWr);
                self.wr_gate.raise(now + t.tburst, Constraint::TCcd);
                self.rd_gate.raise(now + t.tcwl + t.tburst + t.twtr, Constraint::TWtr);
            }
            CommandKind::RefPb | CommandKind::RefAb(_) => {
                let latency = self.costs.latency(cmd.kind);
                let rows = self.costs.rows(cmd.kind);
                let end = now + latency;
                let targets = if cmd.kind == CommandKind::RefPb {
                    cmd.bank as usize..cmd.bank as usize + 1
                } else {
                    0..rank.banks.len()
                };
                for bank in &mut rank.banks[targets] {
                    bank.refresh_end = end;
                    bank.refreshing_subarray = bank.counters.refresh_subarray;
                    outcome.refresh_subarray = Some(bank.refreshing_subarray);
                    bank.counters = sarp_refresh_advance(bank.counters, rows, &g);
                    if !sarp {
                        bank.act_gate.raise(end, Constraint::Refreshing);
                    }
                }
                rank.refresh_end = rank.refresh_end.max(end);
            }
        }
        outcome
    }
}
