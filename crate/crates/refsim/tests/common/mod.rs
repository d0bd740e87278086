//! Drivers shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refsim_core::engine::{ChannelEngine, CommandKind, DramCommand, EngineConfig};
use refsim_core::geometry::derive_timing;
use refsim_core::oracle::oracle_check;
use refsim_core::refresh::{ChannelView, RefreshScheduler, CREDIT_LIMIT};
use refsim_core::{CurrentParams, DensityProfile, DramGeometry, PolicyKind, RawTiming, RefreshScope};

pub fn engine_config(policy: PolicyKind, density: u32, geometry: DramGeometry) -> EngineConfig {
    let profile = DensityProfile::for_density(density).unwrap();
    let timing = derive_timing(
        &profile,
        &geometry,
        &RawTiming::default(),
        &CurrentParams::default(),
        policy.scope(),
    )
    .unwrap();
    EngineConfig {
        channel: 0,
        geometry,
        timing,
        sarp: policy.uses_sarp(),
        retention_ms: profile.retention_ms,
    }
}

pub struct FuzzRun {
    pub cfg: EngineConfig,
    pub history: Vec<(DramCommand, u64)>,
    pub attempts: u64,
    /// Sampled rejected attempts: (history length at the time, command, cycle).
    pub rejected: Vec<(usize, DramCommand, u64)>,
}

/// Random command stream against the engine: one random command attempted
/// per cycle, issued when the engine accepts it. Rows come from a small set
/// per bank (spread over subarrays) so row hits and subarray collisions occur.
pub fn fuzz_engine(policy: PolicyKind, density: u32, accepted: usize, seed: u64) -> FuzzRun {
    let cfg = engine_config(policy, density, DramGeometry::default());
    let g = cfg.geometry;
    let mut e = ChannelEngine::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<u32> = (0..6).map(|i| i * g.rows_per_subarray() * 3 / 2 + i).collect();
    let mode = policy.fgr_mode();
    let mut history = Vec::with_capacity(accepted);
    let mut rejected = Vec::new();
    // Rank being emptied for an all-bank refresh; no ACTs go to it.
    let mut draining: Option<u8> = None;
    let mut attempts = 0;
    let mut now = 0u64;
    while history.len() < accepted {
        now += 1;
        attempts += 1;
        let rank = rng.gen_range(0..g.ranks_per_channel) as u8;
        let bank = rng.gen_range(0..g.banks_per_rank) as u8;
        let open = e.bank(rank, bank).open_row;
        let row = match open {
            Some(r) if rng.gen_bool(0.8) => r,
            _ => rows[rng.gen_range(0..rows.len())],
        };
        let col = rng.gen_range(0..g.columns_per_row) as u16;
        let roll = rng.gen_range(0..100);
        let cmd = match roll {
            0..=29 if draining == Some(rank) => continue,
            0..=29 => DramCommand::act(0, rank, bank, row, &g),
            30..=49 => DramCommand::pre(0, rank, bank),
            50..=69 => DramCommand::column(CommandKind::Rd, 0, rank, bank, row, col, &g),
            70..=89 => DramCommand::column(CommandKind::Wr, 0, rank, bank, row, col, &g),
            _ => match policy.scope() {
                _ if policy == PolicyKind::NoRefresh => continue,
                RefreshScope::PerBank if roll < 97 => DramCommand::ref_pb(0, rank, bank),
                // All-bank refresh needs a precharged rank: close banks first.
                _ => match (0..g.banks_per_rank as u8).find(|&b| e.bank(rank, b).open_row.is_some()) {
                    Some(b) if !cfg.sarp && (draining == Some(rank) || rng.gen_bool(0.2)) => {
                        draining = Some(rank);
                        DramCommand::pre(0, rank, b)
                    }
                    _ => DramCommand::ref_ab(0, rank, mode),
                },
            },
        };
        if e.check(&cmd, now).is_ok() {
            e.issue(&cmd, now);
            history.push((cmd, now));
            if cmd.kind.is_refresh() && draining == Some(rank) {
                draining = None;
            }
        } else if attempts % 997 == 0 {
            rejected.push((history.len(), cmd, now));
        }
    }
    FuzzRun {
        cfg,
        history,
        attempts,
        rejected,
    }
}

pub struct CreditFuzz {
    pub boundaries: u64,
    pub refreshes: u64,
    pub forced: u64,
    pub min_credit: i8,
    pub max_credit: i8,
}

/// Drives the DARP scheduler with adversarial random demand and writeback
/// phases until `boundaries` per-bank boundaries have passed, checking the
/// credit bound and conservation after every step (at most one boundary per
/// rank per step).
pub fn darp_credit_fuzz(policy: PolicyKind, boundaries: u64, seed: u64) -> Result<CreditFuzz, String> {
    let cfg = engine_config(policy, 32, DramGeometry::default());
    let g = cfg.geometry;
    let mut e = ChannelEngine::new(cfg).unwrap();
    let mut s = RefreshScheduler::new(policy, &e, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ranks = g.ranks_per_channel as u8;
    let period = s.schedule(0).period;
    let start: Vec<u64> = (0..ranks).map(|r| s.schedule(r).next).collect();
    let mut demand = vec![0u16; g.banks_per_channel()];
    let mut busy_p = 0.5;
    let mut writeback = false;
    let mut out = CreditFuzz {
        boundaries: 0,
        refreshes: 0,
        forced: 0,
        min_credit: 0,
        max_credit: 0,
    };
    let mut now = 0u64;
    while out.boundaries < boundaries {
        // Occasionally change regime: from idle to saturated banks.
        if rng.gen_bool(0.002) {
            busy_p = [0.0, 0.3, 0.7, 0.95, 1.0][rng.gen_range(0..5)];
            writeback = rng.gen_bool(0.3);
        }
        for d in demand.iter_mut() {
            *d = if rng.gen_bool(busy_p) { rng.gen_range(1..20) } else { 0 };
        }
        now += if rng.gen_bool(0.7) {
            rng.gen_range(1..=8)
        } else {
            rng.gen_range(9..=period / 2)
        };
        let view = ChannelView {
            now,
            engine: &e,
            demand: &demand,
            reads_pending: 0,
            writeback,
        };
        s.tick(&view);
        let mut issued = None;
        for (i, t) in s.mandatory().iter().enumerate() {
            if view.can_issue(t) {
                issued = Some((*t, Some(i)));
                break;
            }
        }
        if issued.is_none() && rng.gen_bool(0.5) {
            issued = s.opportunistic(&view).map(|t| (t, None));
        }
        if let Some((t, idx)) = issued {
            e.issue(&t.command(0), now);
            let entry = s.on_issued(&t, idx, now);
            out.refreshes += 1;
            if entry.class == refsim_core::refresh::RefreshClass::Forced {
                out.forced += 1;
            }
        }
        let c = s.credits();
        for u in 0..c.units() {
            let credit = c.credit(u);
            if !(-CREDIT_LIMIT..=CREDIT_LIMIT).contains(&credit) {
                return Err(format!("unit {u} credit {credit} at cycle {now}"));
            }
            if i128::from(c.issued(u)) - i128::from(c.scheduled(u)) != i128::from(credit) {
                return Err(format!(
                    "unit {u} not conserved at cycle {now}: issued {} scheduled {} credit {credit}",
                    c.issued(u),
                    c.scheduled(u)
                ));
            }
            out.min_credit = out.min_credit.min(credit);
            out.max_credit = out.max_credit.max(credit);
        }
        out.boundaries = (0..ranks)
            .map(|r| (s.schedule(r).next - start[r as usize]) / period)
            .sum();
    }
    Ok(out)
}

/// Fraction of uniformly random rows of a refreshing bank that fall in the
/// subarray being refreshed, measured through the engine's ACT check.
pub fn sarp_conflict_rate(subarrays: u32, samples: u64, seed: u64) -> f64 {
    let geometry = DramGeometry {
        subarrays_per_bank: subarrays,
        ..DramGeometry::default()
    };
    let cfg = engine_config(PolicyKind::SarpPb, 32, geometry);
    let trfc = cfg.timing.trfc_pb;
    let mut e = ChannelEngine::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut now = 1u64;
    let mut hits = 0u64;
    for _ in 0..samples {
        let rank = rng.gen_range(0..geometry.ranks_per_channel) as u8;
        let bank = rng.gen_range(0..geometry.banks_per_rank) as u8;
        e.issue(&DramCommand::ref_pb(0, rank, bank), now);
        let row = rng.gen_range(0..geometry.rows_per_bank);
        match e.check(&DramCommand::act(0, rank, bank, row, &geometry), now + 1) {
            Ok(()) => {}
            Err(refsim_core::engine::Constraint::SubarrayConflict) => hits += 1,
            Err(other) => panic!("unexpected rejection {other}"),
        }
        now += trfc + 1;
    }
    hits as f64 / samples as f64
}

pub struct PlantedFault {
    pub name: &'static str,
    pub cfg: EngineConfig,
    /// Legal prefix followed by one faulty command.
    pub history: Vec<(DramCommand, u64)>,
}

/// Small histories whose last command breaks exactly one rule.
pub fn planted_faults() -> Vec<PlantedFault> {
    let plain = engine_config(PolicyKind::PerBank, 32, DramGeometry::default());
    let sarp = engine_config(PolicyKind::SarpPb, 32, DramGeometry::default());
    let g = plain.geometry;
    let t = plain.timing.clone();
    let act = |bank: u8, row: u32| DramCommand::act(0, 0, bank, row, &g);
    let rd = |bank: u8, row: u32| DramCommand::column(CommandKind::Rd, 0, 0, bank, row, 0, &g);
    let wr = |bank: u8, row: u32| DramCommand::column(CommandKind::Wr, 0, 0, bank, row, 0, &g);
    let pre = |bank: u8| DramCommand::pre(0, 0, bank);
    let refpb = |bank: u8| DramCommand::ref_pb(0, 0, bank);
    let f = |name, cfg: &EngineConfig, history| PlantedFault {
        name,
        cfg: cfg.clone(),
        history,
    };
    let b = 10u64;
    vec![
        f("tRCD", &plain, vec![(act(0, 100), b), (rd(0, 100), b + t.trcd - 1)]),
        f("tRAS", &plain, vec![(act(0, 100), b), (pre(0), b + t.tras - 1)]),
        f(
            "tRP",
            &plain,
            vec![
                (act(0, 100), b),
                (pre(0), b + t.tras),
                (act(0, 200), b + t.tras + t.trp - 1),
            ],
        ),
        f("tRRD", &plain, vec![(act(0, 100), b), (act(1, 100), b + t.trrd - 1)]),
        f(
            "tFAW",
            &plain,
            vec![
                (act(0, 1), b),
                (act(1, 1), b + t.trrd),
                (act(2, 1), b + 2 * t.trrd),
                (act(3, 1), b + 3 * t.trrd),
                (act(4, 1), b + t.tfaw - 1),
            ],
        ),
        f(
            "tWTR",
            &plain,
            vec![
                (act(0, 100), b),
                (wr(0, 100), b + t.trcd),
                (rd(0, 100), b + t.trcd + t.tcwl + t.tburst + t.twtr - 1),
            ],
        ),
        f(
            "tCCD",
            &plain,
            vec![
                (act(0, 100), b),
                (act(1, 100), b + t.trrd),
                (rd(0, 100), b + t.trrd + t.trcd),
                (rd(1, 100), b + t.trrd + t.trcd + t.tburst - 1),
            ],
        ),
        f(
            "ACT to refreshing bank",
            &plain,
            vec![(refpb(0), b), (act(0, 100), b + t.trfc_pb - 1)],
        ),
        f(
            "overlapping REFpb in a rank",
            &plain,
            vec![(refpb(0), b), (refpb(1), b + 2)],
        ),
        f("RD to closed bank", &plain, vec![(rd(0, 100), b)]),
        f("RD row miss", &plain, vec![(act(0, 100), b), (rd(0, 200), b + t.trcd)]),
        f("command bus", &plain, vec![(act(0, 100), b), (act(1, 100), b)]),
        f(
            "REFab with open bank",
            &plain,
            vec![
                (act(3, 100), b),
                (DramCommand::ref_ab(0, 0, refsim_core::FgrMode::X1), b + t.trc),
            ],
        ),
        // The first REFpb of a bank refreshes subarray 0 (rows 0..).
        f("SARP subarray conflict", &sarp, vec![(refpb(0), b), (act(0, 5), b + 2)]),
    ]
}

/// Oracle violations of a history.
pub fn violations(cfg: &EngineConfig, history: &[(DramCommand, u64)]) -> usize {
    oracle_check(cfg, history).len()
}
