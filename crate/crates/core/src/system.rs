//! Whole-system simulation loop: cores, address translation and one
//! controller per channel, advanced one DRAM cycle at a time.

use alloc::vec::Vec;

use crate::audit::{retention_audit, AuditReport, AuditSpec};
use crate::controller::{ChannelController, MemRequest, QueueConfig, ReadCompletion};
use crate::engine::{ChannelEngine, CommandCounts, EngineConfig, RefreshCosts};
use crate::geometry::{derive_timing, CurrentParams, DensityProfile, DramGeometry, RawTiming, TimingParams};
use crate::metrics::{energy_accumulate, EnergyBreakdown, SimStats};
use crate::refresh::{PolicyKind, RefreshCounts, RefreshScheduler};
use crate::workload::{
    AddressMap, CoreModel, DecodedAddress, MemoryPort, PageMapper, ReqKind, TraceSource, CORE_CLOCK_RATIO,
};
use crate::{ConfigError, Cycle};

#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub geometry: DramGeometry,
    pub density: DensityProfile,
    pub raw: RawTiming,
    pub currents: CurrentParams,
    pub queues: QueueConfig,
    pub policy: PolicyKind,
    pub seed: u64,
    pub warmup_cycles: Cycle,
    pub measured_cycles: Cycle,
    pub record_commands: bool,
}

impl SystemConfig {
    pub fn new(policy: PolicyKind, density_gbit: u32) -> Result<Self, ConfigError> {
        Ok(Self {
            geometry: DramGeometry::default(),
            density: DensityProfile::for_density(density_gbit)?,
            raw: RawTiming::default(),
            currents: CurrentParams::default(),
            queues: QueueConfig::default(),
            policy,
            seed: 0,
            warmup_cycles: 1_000_000,
            measured_cycles: 50_000_000,
            record_commands: false,
        })
    }

    pub fn timing(&self) -> Result<TimingParams, ConfigError> {
        derive_timing(
            &self.density,
            &self.geometry,
            &self.raw,
            &self.currents,
            self.policy.scope(),
        )
    }
}

/// One core of a mix. `id` is the core's position in the full mix, which
/// fixes its physical page placement whether it runs shared or alone.
#[derive(Debug, Clone)]
pub struct CoreSpec {
    pub id: usize,
    pub source: TraceSource,
}

struct Port<'a> {
    channels: &'a mut [ChannelController],
    map: &'a AddressMap,
    pages: &'a PageMapper,
    ids: &'a [usize],
    /// Last translation per core; a backpressured access is re-offered
    /// every core cycle.
    recent: &'a mut [(u64, DecodedAddress)],
    next_id: &'a mut u64,
    now: Cycle,
}

impl MemoryPort for Port<'_> {
    fn offer(&mut self, core: usize, kind: ReqKind, addr: u64) -> Option<u64> {
        let d = match self.recent[core] {
            (a, d) if a == addr => d,
            _ => {
                let d = self.map.decode(self.pages.translate(self.ids[core], addr));
                self.recent[core] = (addr, d);
                d
            }
        };
        let ch = &mut self.channels[d.channel as usize];
        if !ch.has_room(kind) {
            ch.note_backpressure();
            return None;
        }
        let req = MemRequest::new(*self.next_id, core as u16, kind, d, self.now, ch.engine())
            .expect("decoded address within geometry");
        ch.enqueue(req).ok()?;
        *self.next_id += 1;
        Some(req.id)
    }
}

#[derive(Debug, Clone, Default)]
struct Snapshot {
    commands: Vec<CommandCounts>,
    refresh: RefreshCounts,
    active: Cycle,
    at: Cycle,
}

pub struct Simulation {
    cfg: SystemConfig,
    timing: TimingParams,
    cores: Vec<CoreModel>,
    ids: Vec<usize>,
    recent: Vec<(u64, DecodedAddress)>,
    channels: Vec<ChannelController>,
    map: AddressMap,
    pages: PageMapper,
    next_id: u64,
    now: Cycle,
    done: Vec<ReadCompletion>,
    mark: Snapshot,
}

impl Simulation {
    /// `mix_cores` is the size of the full mix the cores belong to.
    pub fn new(cfg: &SystemConfig, cores: Vec<CoreSpec>, mix_cores: usize) -> Result<Self, ConfigError> {
        if cores.is_empty() {
            return Err(ConfigError::Workload("no cores".into()));
        }
        cfg.queues.validate()?;
        cfg.currents.validate()?;
        let timing = cfg.timing()?;
        let map = AddressMap::new(&cfg.geometry)?;
        let pages = PageMapper::new(cfg.geometry.capacity_bytes(), mix_cores.max(cores.len()), cfg.seed);
        let mut channels = Vec::new();
        for ch in 0..cfg.geometry.channels as u8 {
            let engine = ChannelEngine::new(EngineConfig {
                channel: ch,
                geometry: cfg.geometry,
                timing: timing.clone(),
                sarp: cfg.policy.uses_sarp(),
                retention_ms: cfg.density.retention_ms,
            })?;
            let seed = cfg.seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ u64::from(ch);
            let sched = RefreshScheduler::new(cfg.policy, &engine, seed);
            let mut c = ChannelController::new(engine, sched, cfg.queues)?;
            c.record_commands(cfg.record_commands);
            channels.push(c);
        }
        let ids: Vec<usize> = cores.iter().map(|c| c.id).collect();
        let recent = ids.iter().map(|&id| (0, map.decode(pages.translate(id, 0)))).collect();
        let cores = cores
            .into_iter()
            .enumerate()
            .map(|(i, c)| CoreModel::new(i, c.source))
            .collect();
        let mut sim = Self {
            cfg: cfg.clone(),
            timing,
            cores,
            ids,
            recent,
            channels,
            map,
            pages,
            next_id: 0,
            now: 0,
            done: Vec::new(),
            mark: Snapshot::default(),
        };
        sim.mark = sim.snapshot();
        Ok(sim)
    }

    pub fn now(&self) -> Cycle {
        self.now
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn channels(&self) -> &[ChannelController] {
        &self.channels
    }

    pub fn cores(&self) -> &[CoreModel] {
        &self.cores
    }

    pub fn costs(&self) -> RefreshCosts {
        *self.channels[0].engine().costs()
    }

    /// One DRAM cycle: controllers first, then six core cycles.
    pub fn step(&mut self) {
        let now = self.now;
        for ch in self.channels.iter_mut() {
            ch.tick(now, &mut self.done);
        }
        for c in self.done.drain(..) {
            self.cores[c.core as usize].complete(c.id, c.ready * CORE_CLOCK_RATIO);
        }
        let mut port = Port {
            channels: &mut self.channels,
            map: &self.map,
            pages: &self.pages,
            ids: &self.ids,
            recent: &mut self.recent,
            next_id: &mut self.next_id,
            now,
        };
        for sub in 0..CORE_CLOCK_RATIO {
            let core_now = now * CORE_CLOCK_RATIO + sub;
            for core in self.cores.iter_mut() {
                core.tick(core_now, &mut port);
            }
        }
        self.now += 1;
    }

    pub fn run(&mut self, cycles: Cycle) {
        for _ in 0..cycles {
            self.step();
        }
    }

    fn snapshot(&self) -> Snapshot {
        let mut refresh = RefreshCounts::default();
        let mut active = 0;
        for ch in &self.channels {
            let c = ch.policy().counts();
            refresh.nominal += c.nominal;
            refresh.postponed += c.postponed;
            refresh.pulled_in += c.pulled_in;
            refresh.forced += c.forced;
            refresh.during_writeback += c.during_writeback;
            refresh.deferrals += c.deferrals;
            for r in 0..self.cfg.geometry.ranks_per_channel as u8 {
                active += ch.engine().active_cycles(r, self.now);
            }
        }
        Snapshot {
            commands: self.channels.iter().map(|c| *c.engine().counts()).collect(),
            refresh,
            active,
            at: self.now,
        }
    }

    /// Starts the measurement window here.
    pub fn begin_measurement(&mut self) {
        for c in self.cores.iter_mut() {
            c.reset_counters();
        }
        for ch in self.channels.iter_mut() {
            ch.reset_stats();
        }
        self.mark = self.snapshot();
    }

    /// Warmup then measurement, as configured.
    pub fn run_configured(&mut self) {
        self.run(self.cfg.warmup_cycles);
        self.begin_measurement();
        self.run(self.cfg.measured_cycles);
    }

    /// Statistics since the last [`Self::begin_measurement`].
    pub fn stats(&self) -> SimStats {
        let cur = self.snapshot();
        let mark = &self.mark;
        let cycles = cur.at - mark.at;
        let ranks = Cycle::from(self.cfg.geometry.channels * self.cfg.geometry.ranks_per_channel);
        let active = cur.active - mark.active;
        let mut s = SimStats {
            core_retired: self.cores.iter().map(|c| c.retired).collect(),
            core_cycles: self.cores.iter().map(|c| c.cycles).collect(),
            channel_commands: cur
                .commands
                .iter()
                .zip(&mark.commands)
                .map(|(a, b)| {
                    let mut d = CommandCounts::default();
                    for i in 0..d.by_kind.len() {
                        d.by_kind[i] = a.by_kind[i] - b.by_kind[i];
                    }
                    d
                })
                .collect(),
            refresh: RefreshCounts {
                nominal: cur.refresh.nominal - mark.refresh.nominal,
                postponed: cur.refresh.postponed - mark.refresh.postponed,
                pulled_in: cur.refresh.pulled_in - mark.refresh.pulled_in,
                forced: cur.refresh.forced - mark.refresh.forced,
                during_writeback: cur.refresh.during_writeback - mark.refresh.during_writeback,
                deferrals: cur.refresh.deferrals - mark.refresh.deferrals,
            },
            dram_cycles: cycles,
            rank_active_cycles: active,
            rank_precharged_cycles: ranks * cycles - active,
            ..SimStats::default()
        };
        for ch in &self.channels {
            let st = ch.stats();
            s.subarray_conflicts += st.subarray_conflicts;
            s.refresh_bank_conflicts += st.refresh_bank_conflicts;
            s.row_hits += st.row_hits;
            s.reads_completed += st.reads_served;
            s.writes_completed += st.writes_served;
            s.read_latency.merge(&st.read_latency);
            s.write_latency.merge(&st.write_latency);
        }
        s
    }

    pub fn energy(&self, stats: &SimStats) -> EnergyBreakdown {
        energy_accumulate(stats, &self.cfg.currents, &self.timing, &self.costs())
    }

    /// Retention audit of every channel from cycle 0 to now.
    pub fn audit(&self) -> AuditReport {
        let g = &self.cfg.geometry;
        let retention_cycles = libm::floor(self.cfg.density.retention_ms * 1e6 / self.timing.tck_ns) as Cycle;
        let mut report = AuditReport::default();
        for ch in &self.channels {
            let ranks = g.ranks_per_channel as u8;
            let banks = g.banks_per_rank as u8;
            let nominal = (0..ranks)
                .flat_map(|r| (0..banks).map(move |b| (r, b)))
                .map(|(r, b)| ch.policy().nominal_slots(r, b))
                .collect();
            let spec = AuditSpec {
                ranks,
                banks,
                rows_per_bank: g.rows_per_bank,
                retention_cycles,
                slack: 8 * self.timing.trefi_ab,
                costs: *ch.engine().costs(),
                nominal,
            };
            report.merge(&retention_audit(ch.refresh_log(), &spec, self.now));
        }
        report
    }
}
