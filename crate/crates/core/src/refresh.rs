//! Refresh policies.
//!
//! A [`RefreshScheduler`] is owned by one channel controller and consulted
//! every cycle. It walks its nominal schedule, keeps per-unit refresh credits
//! (a unit is a bank for per-bank policies, a rank for all-bank ones) and
//! exposes two kinds of requests to the controller:
//!
//! * mandatory refreshes, which take priority over demand traffic to their
//!   target until they issue;
//! * an opportunistic refresh, offered only when the controller found no
//!   demand command to issue this cycle (DARP's idle-bank refresh).
//!
//! Credit bookkeeping: `credit = issued - scheduled`. A schedule boundary
//! whose refresh is not issued right away bumps `scheduled` (a postponement,
//! or consumption of an earlier pull-in); a refresh issued off schedule bumps
//! `issued`; a refresh issued for its own boundary bumps both. Neither side
//! may push the credit outside `[-8, +8]`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{ChannelEngine, CommandKind, DramCommand};
use crate::geometry::{FgrMode, RefreshScope, TimingParams};
use crate::{ConfigError, Cycle};

/// Refresh commands a unit may run ahead of or behind its schedule.
pub const CREDIT_LIMIT: i8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    AllBank,
    PerBank,
    Elastic,
    Darp,
    SarpAb,
    SarpPb,
    Dsarp,
    Fgr2x,
    Fgr4x,
    Adaptive,
    NoRefresh,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 11] = [
        PolicyKind::AllBank,
        PolicyKind::PerBank,
        PolicyKind::Elastic,
        PolicyKind::Darp,
        PolicyKind::SarpAb,
        PolicyKind::SarpPb,
        PolicyKind::Dsarp,
        PolicyKind::Fgr2x,
        PolicyKind::Fgr4x,
        PolicyKind::Adaptive,
        PolicyKind::NoRefresh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::AllBank => "ab",
            PolicyKind::PerBank => "pb",
            PolicyKind::Elastic => "elastic",
            PolicyKind::Darp => "darp",
            PolicyKind::SarpAb => "sarp-ab",
            PolicyKind::SarpPb => "sarp-pb",
            PolicyKind::Dsarp => "dsarp",
            PolicyKind::Fgr2x => "fgr2x",
            PolicyKind::Fgr4x => "fgr4x",
            PolicyKind::Adaptive => "ar",
            PolicyKind::NoRefresh => "noref",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| ConfigError::UnknownPolicy(String::from(s)))
    }

    pub fn uses_sarp(self) -> bool {
        matches!(self, PolicyKind::SarpAb | PolicyKind::SarpPb | PolicyKind::Dsarp)
    }

    pub fn scope(self) -> RefreshScope {
        match self {
            PolicyKind::PerBank | PolicyKind::Darp | PolicyKind::SarpPb | PolicyKind::Dsarp => RefreshScope::PerBank,
            _ => RefreshScope::AllBank,
        }
    }

    /// FGR mode of the nominal schedule.
    pub fn fgr_mode(self) -> FgrMode {
        match self {
            PolicyKind::Fgr2x => FgrMode::X2,
            PolicyKind::Fgr4x => FgrMode::X4,
            _ => FgrMode::X1,
        }
    }

    fn uses_darp(self) -> bool {
        matches!(self, PolicyKind::Darp | PolicyKind::Dsarp)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Why a refresh was issued when it was.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RefreshClass {
    /// At its own schedule boundary.
    Nominal,
    /// Serving a boundary that was skipped earlier.
    Postponed,
    /// Ahead of its boundary.
    PulledIn,
    /// Required now to stay within the postponement limit.
    Forced,
}

impl RefreshClass {
    pub fn name(self) -> &'static str {
        match self {
            RefreshClass::Nominal => "nominal",
            RefreshClass::Postponed => "postponed",
            RefreshClass::PulledIn => "pulled",
            RefreshClass::Forced => "forced",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            RefreshClass::Nominal,
            RefreshClass::Postponed,
            RefreshClass::PulledIn,
            RefreshClass::Forced,
        ]
        .into_iter()
        .find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CreditError {
    PostponeLimit,
    PullInLimit,
}

/// Signed per-unit refresh credits bounded by ±[`CREDIT_LIMIT`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefreshCreditTable {
    credit: Vec<i8>,
    issued: Vec<u64>,
    scheduled: Vec<u64>,
}

impl RefreshCreditTable {
    pub fn new(units: usize) -> Self {
        Self {
            credit: alloc::vec![0; units],
            issued: alloc::vec![0; units],
            scheduled: alloc::vec![0; units],
        }
    }

    pub fn units(&self) -> usize {
        self.credit.len()
    }

    pub fn credit(&self, unit: usize) -> i8 {
        self.credit[unit]
    }

    pub fn issued(&self, unit: usize) -> u64 {
        self.issued[unit]
    }

    pub fn scheduled(&self, unit: usize) -> u64 {
        self.scheduled[unit]
    }

    /// A boundary passes without its refresh being issued.
    pub fn defer(&mut self, unit: usize) -> Result<(), CreditError> {
        if self.credit[unit] <= -CREDIT_LIMIT {
            return Err(CreditError::PostponeLimit);
        }
        self.scheduled[unit] += 1;
        self.credit[unit] -= 1;
        Ok(())
    }

    /// A refresh issues without a boundary of its own.
    pub fn advance(&mut self, unit: usize) -> Result<(), CreditError> {
        if self.credit[unit] >= CREDIT_LIMIT {
            return Err(CreditError::PullInLimit);
        }
        self.issued[unit] += 1;
        self.credit[unit] += 1;
        Ok(())
    }

    /// A refresh issues for its own boundary.
    pub fn settle(&mut self, unit: usize) {
        self.issued[unit] += 1;
        self.scheduled[unit] += 1;
    }

    pub fn is_conserved(&self) -> bool {
        (0..self.units()).all(|u| self.issued[u] as i64 - self.scheduled[u] as i64 == i64::from(self.credit[u]))
    }
}

/// Nominal schedule of one rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefreshSchedule {
    pub next: Cycle,
    pub period: Cycle,
    /// Bank the next per-bank boundary belongs to.
    pub pointer: u8,
}

/// A refresh the controller should issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefreshTarget {
    pub rank: u8,
    /// `None` for all-bank refresh.
    pub bank: Option<u8>,
    pub mode: FgrMode,
    pub class: RefreshClass,
    /// Issued for its own boundary (credit-neutral).
    pub on_schedule: bool,
    pub during_writeback: bool,
}

impl RefreshTarget {
    pub fn command(&self, channel: u8) -> DramCommand {
        match self.bank {
            Some(bank) => DramCommand::ref_pb(channel, self.rank, bank),
            None => DramCommand::ref_ab(channel, self.rank, self.mode),
        }
    }

    pub fn covers(&self, rank: u8, bank: u8) -> bool {
        self.rank == rank && self.bank.is_none_or(|b| b == bank)
    }
}

/// One issued refresh, as dumped to the refresh log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefreshLogEntry {
    pub cycle: Cycle,
    pub kind: CommandKind,
    pub rank: u8,
    pub bank: u8,
    pub credit_after: i8,
    pub class: RefreshClass,
    pub during_writeback: bool,
}

/// What a policy may look at when deciding.
pub struct ChannelView<'a> {
    pub now: Cycle,
    pub engine: &'a ChannelEngine,
    /// Pending demand requests (reads + writes) per bank, rank-major.
    pub demand: &'a [u16],
    pub reads_pending: usize,
    pub writeback: bool,
}

impl ChannelView<'_> {
    fn banks_per_rank(&self) -> usize {
        self.engine.config().geometry.banks_per_rank as usize
    }

    pub fn bank_demand(&self, rank: u8, bank: u8) -> u16 {
        self.demand[rank as usize * self.banks_per_rank() + bank as usize]
    }

    pub fn rank_demand(&self, rank: u8) -> u32 {
        let n = self.banks_per_rank();
        let base = rank as usize * n;
        self.demand[base..base + n].iter().map(|&d| u32::from(d)).sum()
    }

    pub fn can_issue(&self, target: &RefreshTarget) -> bool {
        let cmd = target.command(self.engine.config().channel);
        self.engine.check(&cmd, self.now).is_ok()
    }
}

/// Exponential moving average of a rank's idle-gap lengths.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdlePredictor {
    pub predicted: Cycle,
    idle_since: Option<Cycle>,
}

impl IdlePredictor {
    pub fn observe(&mut self, now: Cycle, idle: bool) {
        match (idle, self.idle_since) {
            (true, None) => self.idle_since = Some(now),
            (false, Some(start)) => {
                let gap = now - start;
                // EMA with weight 1/4 on the newest gap.
                self.predicted = (3 * self.predicted + gap) / 4;
                self.idle_since = None;
            }
            _ => {}
        }
    }

    pub fn idle_for(&self, now: Cycle) -> Option<Cycle> {
        self.idle_since.map(|s| now - s)
    }
}

/// Picks the bank for a write-refresh parallelization refresh: fewest
/// pending demands, credit below the pull-in limit, lowest index on ties.
pub fn warp_select_bank(demand_counts: &[u16], credits: &[i8]) -> Option<u8> {
    demand_counts
        .iter()
        .zip(credits)
        .enumerate()
        .filter(|(_, (_, &c))| c < CREDIT_LIMIT)
        .min_by_key(|&(i, (&d, _))| (d, i))
        .map(|(i, _)| i as u8)
}

/// Mode the adaptive policy picks at a 1x boundary: fine-grained refresh
/// when no reads are waiting, 1x otherwise.
pub fn adaptive_mode(reads_pending: usize) -> FgrMode {
    if reads_pending == 0 {
        FgrMode::X4
    } else {
        FgrMode::X1
    }
}

/// Elastic refresh: cycles a rank must stay idle before an owed refresh is
/// issued, shrinking linearly to zero as the backlog reaches the limit.
pub fn elastic_delay(max_delay: Cycle, backlog: u8) -> Cycle {
    let limit = CREDIT_LIMIT as u64;
    let backlog = u64::from(backlog).min(limit);
    max_delay * (limit - backlog) / limit
}

/// Where a unit's refreshes nominally fall, for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NominalSlots {
    pub offset: Cycle,
    pub interval: Cycle,
    pub rows_per_slot: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RefreshCounts {
    pub nominal: u64,
    pub postponed: u64,
    pub pulled_in: u64,
    pub forced: u64,
    pub during_writeback: u64,
    /// Boundaries skipped (postponements taken).
    pub deferrals: u64,
}

impl RefreshCounts {
    pub fn total(&self) -> u64 {
        self.nominal + self.postponed + self.pulled_in + self.forced
    }

    fn record(&mut self, class: RefreshClass, during_writeback: bool) {
        match class {
            RefreshClass::Nominal => self.nominal += 1,
            RefreshClass::Postponed => self.postponed += 1,
            RefreshClass::PulledIn => self.pulled_in += 1,
            RefreshClass::Forced => self.forced += 1,
        }
        if during_writeback {
            self.during_writeback += 1;
        }
    }
}

/// Per-channel refresh scheduler implementing every [`PolicyKind`].
#[derive(Debug, Clone)]
pub struct RefreshScheduler {
    kind: PolicyKind,
    ranks: u8,
    banks: u8,
    trefi_pb: Cycle,
    trefi_fine: Cycle,
    trfc_ab: Cycle,
    /// Lead time before a boundary at which a unit stuck at the postponement
    /// limit gets its refresh forced.
    guard: Cycle,
    schedules: Vec<RefreshSchedule>,
    credits: RefreshCreditTable,
    mandatory: Vec<RefreshTarget>,
    rng: ChaCha8Rng,
    idle: Vec<IdlePredictor>,
    /// Adaptive refresh: remaining fine refreshes in the current slot and when
    /// the next one is due.
    fine_left: Vec<u8>,
    fine_next: Vec<Cycle>,
    counts: RefreshCounts,
    rows_pb: u32,
    rows_ab: [u32; 3],
}

impl RefreshScheduler {
    pub fn new(kind: PolicyKind, engine: &ChannelEngine, seed: u64) -> Self {
        let g = engine.config().geometry;
        let t: &TimingParams = &engine.config().timing;
        let ranks = g.ranks_per_channel as u8;
        let banks = g.banks_per_rank as u8;
        let units = match kind.scope() {
            RefreshScope::PerBank => ranks as usize * banks as usize,
            RefreshScope::AllBank => ranks as usize,
        };
        let mode = kind.fgr_mode();
        let period = match kind.scope() {
            RefreshScope::PerBank => t.trefi_pb,
            RefreshScope::AllBank => t.trefi_ab_for(mode),
        };
        let schedules = (0..ranks)
            .map(|r| RefreshSchedule {
                next: Self::rank_offset(period, ranks, r),
                period,
                pointer: 0,
            })
            .collect();
        // Per-bank refreshes of a rank serialize, so a forced one may queue
        // behind the refresh of the neighbouring bank's boundary.
        let guard = match kind.scope() {
            RefreshScope::PerBank => t.trefi_pb + t.trfc_pb,
            RefreshScope::AllBank => t.trfc_ab_for(mode),
        } + t.trc
            + t.tcwl
            + t.tburst
            + t.twr
            + t.trp;
        let costs = engine.costs();
        Self {
            kind,
            ranks,
            banks,
            trefi_pb: t.trefi_pb,
            trefi_fine: t.trefi_ab_for(FgrMode::X4),
            trfc_ab: t.trfc_ab_for(FgrMode::X1),
            guard,
            schedules,
            credits: RefreshCreditTable::new(units),
            mandatory: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            idle: alloc::vec![IdlePredictor::default(); ranks as usize],
            fine_left: alloc::vec![0; ranks as usize],
            fine_next: alloc::vec![0; ranks as usize],
            counts: RefreshCounts::default(),
            rows_pb: costs.rows_pb,
            rows_ab: costs.rows_ab,
        }
    }

    /// Ranks of a channel are staggered evenly across one period.
    fn rank_offset(period: Cycle, ranks: u8, rank: u8) -> Cycle {
        period * Cycle::from(rank) / Cycle::from(ranks.max(1))
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn credits(&self) -> &RefreshCreditTable {
        &self.credits
    }

    pub fn counts(&self) -> &RefreshCounts {
        &self.counts
    }

    pub fn schedule(&self, rank: u8) -> &RefreshSchedule {
        &self.schedules[rank as usize]
    }

    /// Refreshes currently taking priority over demand, oldest first.
    pub fn mandatory(&self) -> &[RefreshTarget] {
        &self.mandatory
    }

    pub fn predicted_idle(&self, rank: u8) -> Cycle {
        self.idle[rank as usize].predicted
    }

    fn unit(&self, rank: u8, bank: Option<u8>) -> usize {
        match (self.kind.scope(), bank) {
            (RefreshScope::PerBank, Some(b)) => rank as usize * self.banks as usize + b as usize,
            _ => rank as usize,
        }
    }

    fn has_mandatory(&self, rank: u8, bank: Option<u8>) -> bool {
        self.mandatory
            .iter()
            .any(|m| m.rank == rank && (bank.is_none() || m.bank.is_none() || m.bank == bank))
    }

    /// Nominal refresh slots of a bank, matching this scheduler's boundaries.
    pub fn nominal_slots(&self, rank: u8, bank: u8) -> Option<NominalSlots> {
        let s = &self.schedules[rank as usize];
        match self.kind {
            PolicyKind::NoRefresh => None,
            _ if self.kind.scope() == RefreshScope::PerBank => Some(NominalSlots {
                offset: Self::rank_offset(self.trefi_pb, self.ranks, rank) + Cycle::from(bank) * self.trefi_pb,
                interval: self.trefi_pb * Cycle::from(self.banks),
                rows_per_slot: self.rows_pb,
            }),
            _ => {
                let mode = self.kind.fgr_mode();
                Some(NominalSlots {
                    offset: Self::rank_offset(s.period, self.ranks, rank),
                    interval: s.period,
                    rows_per_slot: self.rows_ab[mode.index()],
                })
            }
        }
    }

    /// Advances schedules to `view.now`, queueing whatever became mandatory.
    pub fn tick(&mut self, view: &ChannelView<'_>) {
        match self.kind {
            PolicyKind::NoRefresh => {}
            PolicyKind::AllBank | PolicyKind::SarpAb | PolicyKind::Fgr2x | PolicyKind::Fgr4x => {
                for r in 0..self.ranks {
                    self.refab_tick(r, view.now);
                }
            }
            PolicyKind::PerBank | PolicyKind::SarpPb => {
                for r in 0..self.ranks {
                    self.refpb_roundrobin_tick(r, view.now);
                }
            }
            PolicyKind::Darp | PolicyKind::Dsarp => {
                for r in 0..self.ranks {
                    self.darp_out_of_order_tick(r, view);
                }
                if view.writeback {
                    for r in 0..self.ranks {
                        self.warp_tick(r, view);
                    }
                }
            }
            PolicyKind::Elastic => {
                for r in 0..self.ranks {
                    self.elastic_tick(r, view);
                }
            }
            PolicyKind::Adaptive => {
                for r in 0..self.ranks {
                    self.adaptive_refresh_tick(r, view);
                }
            }
        }
    }

    /// All-bank refresh (and FGR): one mandatory REFab per boundary.
    pub fn refab_tick(&mut self, rank: u8, now: Cycle) {
        let mode = self.kind.fgr_mode();
        let s = &mut self.schedules[rank as usize];
        while now >= s.next {
            s.next += s.period;
            self.mandatory.push(RefreshTarget {
                rank,
                bank: None,
                mode,
                class: RefreshClass::Nominal,
                on_schedule: true,
                during_writeback: false,
            });
        }
    }

    /// Per-bank refresh in strict round-robin bank order.
    pub fn refpb_roundrobin_tick(&mut self, rank: u8, now: Cycle) {
        let banks = self.banks;
        let s = &mut self.schedules[rank as usize];
        while now >= s.next {
            let bank = s.pointer;
            s.pointer = (s.pointer + 1) % banks;
            s.next += s.period;
            self.mandatory.push(RefreshTarget {
                rank,
                bank: Some(bank),
                mode: FgrMode::X1,
                class: RefreshClass::Nominal,
                on_schedule: true,
                during_writeback: false,
            });
        }
    }

    /// Out-of-order per-bank refresh, boundary handling (step 1) plus forcing
    /// a refresh for a bank at the postponement limit before its next
    /// boundary arrives.
    pub fn darp_out_of_order_tick(&mut self, rank: u8, view: &ChannelView<'_>) {
        let now = view.now;
        while now >= self.schedules[rank as usize].next {
            let s = &mut self.schedules[rank as usize];
            let bank = s.pointer;
            s.pointer = (s.pointer + 1) % self.banks;
            s.next += s.period;
            self.darp_boundary(rank, bank, view.bank_demand(rank, bank) > 0);
        }
        let s = self.schedules[rank as usize];
        for bank in 0..self.banks {
            let unit = self.unit(rank, Some(bank));
            if self.credits.credit(unit) > -CREDIT_LIMIT || self.has_mandatory(rank, Some(bank)) {
                continue;
            }
            let ahead = Cycle::from((bank + self.banks - s.pointer) % self.banks);
            let boundary = s.next + ahead * s.period;
            if now + self.guard >= boundary {
                self.mandatory.push(RefreshTarget {
                    rank,
                    bank: Some(bank),
                    mode: FgrMode::X1,
                    class: RefreshClass::Forced,
                    on_schedule: false,
                    during_writeback: view.writeback,
                });
            }
        }
    }

    /// Decision at bank `bank`'s boundary.
    pub fn darp_boundary(&mut self, rank: u8, bank: u8, busy: bool) {
        let unit = self.unit(rank, Some(bank));
        let credit = self.credits.credit(unit);
        if credit > 0 {
            // Already refreshed ahead of this boundary.
            self.credits
                .defer(unit)
                .expect("positive credit can always be consumed");
            return;
        }
        if busy && credit > -CREDIT_LIMIT {
            self.credits.defer(unit).expect("checked against the limit");
            self.counts.deferrals += 1;
            return;
        }
        self.mandatory.push(RefreshTarget {
            rank,
            bank: Some(bank),
            mode: FgrMode::X1,
            class: if busy {
                RefreshClass::Forced
            } else {
                RefreshClass::Nominal
            },
            on_schedule: true,
            during_writeback: false,
        });
    }

    /// Write-refresh parallelization: while the channel drains writes, keep
    /// one per-bank refresh going in each rank, on the least loaded bank.
    fn warp_tick(&mut self, rank: u8, view: &ChannelView<'_>) {
        if view.engine.rank_refreshing(rank, view.now) || self.has_mandatory(rank, None) {
            return;
        }
        let n = self.banks as usize;
        let base = rank as usize * n;
        let credits: Vec<i8> = (0..n).map(|b| self.credits.credit(base + b)).collect();
        if let Some(bank) = warp_select_bank(&view.demand[base..base + n], &credits) {
            self.mandatory.push(RefreshTarget {
                rank,
                bank: Some(bank),
                mode: FgrMode::X1,
                class: if credits[bank as usize] < 0 {
                    RefreshClass::Postponed
                } else {
                    RefreshClass::PulledIn
                },
                on_schedule: false,
                during_writeback: true,
            });
        }
    }

    /// Elastic refresh, a simplified reimplementation: skip boundaries while
    /// the rank is busy or its predicted idle period is shorter than tRFCab,
    /// then catch up once the rank has been idle long enough.
    pub fn elastic_tick(&mut self, rank: u8, view: &ChannelView<'_>) {
        let now = view.now;
        let idle = view.rank_demand(rank) == 0;
        self.idle[rank as usize].observe(now, idle);
        let unit = self.unit(rank, None);
        while now >= self.schedules[rank as usize].next {
            let s = &mut self.schedules[rank as usize];
            s.next += s.period;
            let credit = self.credits.credit(unit);
            let predicted = self.idle[rank as usize].predicted;
            let issue_now = idle && predicted >= self.trfc_ab;
            if !issue_now && credit > -CREDIT_LIMIT {
                self.credits.defer(unit).expect("checked against the limit");
                self.counts.deferrals += 1;
            } else {
                self.mandatory.push(RefreshTarget {
                    rank,
                    bank: None,
                    mode: FgrMode::X1,
                    class: if issue_now {
                        RefreshClass::Nominal
                    } else {
                        RefreshClass::Forced
                    },
                    on_schedule: true,
                    during_writeback: false,
                });
            }
        }
        if self.has_mandatory(rank, None) {
            return;
        }
        let credit = self.credits.credit(unit);
        if credit >= 0 {
            return;
        }
        let next = self.schedules[rank as usize].next;
        if credit <= -CREDIT_LIMIT && now + self.guard >= next {
            self.mandatory.push(RefreshTarget {
                rank,
                bank: None,
                mode: FgrMode::X1,
                class: RefreshClass::Forced,
                on_schedule: false,
                during_writeback: view.writeback,
            });
            return;
        }
        let backlog = (-credit) as u8;
        if let Some(idle_for) = self.idle[rank as usize].idle_for(now) {
            if idle_for >= elastic_delay(self.trfc_ab, backlog) {
                self.mandatory.push(RefreshTarget {
                    rank,
                    bank: None,
                    mode: FgrMode::X1,
                    class: RefreshClass::Postponed,
                    on_schedule: false,
                    during_writeback: view.writeback,
                });
            }
        }
    }

    /// Adaptive refresh: at each 1x boundary choose 1x or four 4x refreshes
    /// spread over the interval.
    pub fn adaptive_refresh_tick(&mut self, rank: u8, view: &ChannelView<'_>) -> FgrMode {
        let now = view.now;
        let r = rank as usize;
        let mut chosen = FgrMode::X1;
        while now >= self.schedules[r].next {
            let s = &mut self.schedules[r];
            s.next += s.period;
            chosen = adaptive_mode(view.reads_pending);
            if chosen == FgrMode::X4 {
                self.fine_left[r] = 3;
                self.fine_next[r] = now + self.trefi_fine;
            } else {
                self.fine_left[r] = 0;
            }
            self.mandatory.push(RefreshTarget {
                rank,
                bank: None,
                mode: chosen,
                class: RefreshClass::Nominal,
                on_schedule: true,
                during_writeback: false,
            });
        }
        while self.fine_left[r] > 0 && now >= self.fine_next[r] {
            self.fine_left[r] -= 1;
            self.fine_next[r] += self.trefi_fine;
            self.mandatory.push(RefreshTarget {
                rank,
                bank: None,
                mode: FgrMode::X4,
                class: RefreshClass::Nominal,
                on_schedule: true,
                during_writeback: false,
            });
        }
        chosen
    }

    /// DARP step 3: no demand command could issue this cycle, so refresh a
    /// random idle bank that has credit headroom.
    pub fn opportunistic(&mut self, view: &ChannelView<'_>) -> Option<RefreshTarget> {
        if !self.kind.uses_darp() {
            return None;
        }
        let mut candidates: Vec<RefreshTarget> = Vec::new();
        for rank in 0..self.ranks {
            if self.has_mandatory(rank, None) {
                continue;
            }
            for bank in 0..self.banks {
                let unit = self.unit(rank, Some(bank));
                let credit = self.credits.credit(unit);
                if view.bank_demand(rank, bank) != 0 || credit >= CREDIT_LIMIT {
                    continue;
                }
                let target = RefreshTarget {
                    rank,
                    bank: Some(bank),
                    mode: FgrMode::X1,
                    class: if credit < 0 {
                        RefreshClass::Postponed
                    } else {
                        RefreshClass::PulledIn
                    },
                    on_schedule: false,
                    during_writeback: view.writeback,
                };
                if view.can_issue(&target) {
                    candidates.push(target);
                }
            }
        }
        if candidates.is_empty() {
            return None;
        }
        let pick = self.rng.gen_range(0..candidates.len());
        Some(candidates[pick])
    }

    /// Books an issued refresh. `mandatory_index` identifies the entry of
    /// [`Self::mandatory`] it satisfied, if any.
    pub fn on_issued(&mut self, target: &RefreshTarget, mandatory_index: Option<usize>, now: Cycle) -> RefreshLogEntry {
        if let Some(i) = mandatory_index {
            self.mandatory.remove(i);
        }
        let unit = self.unit(target.rank, target.bank);
        if target.on_schedule {
            self.credits.settle(unit);
        } else {
            self.credits
                .advance(unit)
                .expect("off-schedule refresh issued past the pull-in limit");
        }
        debug_assert!(self.credits.is_conserved());
        self.counts.record(target.class, target.during_writeback);
        let cmd = target.command(0);
        RefreshLogEntry {
            cycle: now,
            kind: cmd.kind,
            rank: target.rank,
            bank: target.bank.unwrap_or(0),
            credit_after: self.credits.credit(unit),
            class: target.class,
            during_writeback: target.during_writeback,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warp_selection_examples() {
        assert_eq!(warp_select_bank(&[3, 0, 2, 5, 1, 4, 2, 6], &[0; 8]), Some(1));
        assert_eq!(warp_select_bank(&[2, 2, 7, 3, 3, 3, 3, 3], &[0; 8]), Some(0));
        assert_eq!(warp_select_bank(&[0; 8], &[8; 8]), None);
        let mut credits = [0i8; 8];
        credits[1] = 8;
        assert_eq!(warp_select_bank(&[3, 0, 2, 5, 1, 4, 2, 6], &credits), Some(4));
    }

    #[test]
    fn credit_table_bounds() {
        let mut t = RefreshCreditTable::new(1);
        for _ in 0..8 {
            t.defer(0).unwrap();
        }
        assert_eq!(t.credit(0), -8);
        assert_eq!(t.defer(0), Err(CreditError::PostponeLimit));
        for _ in 0..16 {
            t.advance(0).unwrap();
        }
        assert_eq!(t.credit(0), 8);
        assert_eq!(t.advance(0), Err(CreditError::PullInLimit));
        t.settle(0);
        assert_eq!(t.credit(0), 8);
        assert!(t.is_conserved());
    }

    #[test]
    fn elastic_delay_shrinks() {
        assert_eq!(elastic_delay(800, 0), 800);
        assert_eq!(elastic_delay(800, 4), 400);
        assert_eq!(elastic_delay(800, 8), 0);
    }

    #[test]
    fn idle_predictor_tracks_gaps() {
        let mut p = IdlePredictor::default();
        p.observe(0, true);
        p.observe(2000, false);
        assert_eq!(p.predicted, 500);
        p.observe(2100, true);
        assert_eq!(p.idle_for(2600), Some(500));
    }

    #[test]
    fn adaptive_heuristic() {
        assert_eq!(adaptive_mode(0), FgrMode::X4);
        assert_eq!(adaptive_mode(3), FgrMode::X1);
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(PolicyKind::parse(k.name()), Ok(k));
        }
        assert!(PolicyKind::parse("banana").is_err());
    }
}
