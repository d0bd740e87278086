//! DRAM organization, timing derivation and current parameters.
//!
//! Raw datasheet values are nanoseconds; everything the engine consumes is in
//! command-clock cycles. Latencies round up, refresh intervals round down, so
//! the simulated device is never faster or longer-lived than the datasheet.

use crate::{ConfigError, Cycle};

/// tRFCab / tRFCpb.
pub const TRFC_AB_TO_PB_RATIO: f64 = 2.3;

/// Refresh commands per retention window.
pub const DEFAULT_REFRESH_SLOTS: u32 = 8192;

/// Relative slack applied before rounding, so that products like
/// `30.0 * 2.1` (63.000000000000014) do not gain a cycle.
const ROUNDING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DramGeometry {
    pub channels: u32,
    pub ranks_per_channel: u32,
    pub banks_per_rank: u32,
    pub subarrays_per_bank: u32,
    pub rows_per_bank: u32,
    /// Cachelines per row.
    pub columns_per_row: u32,
    pub cacheline_bytes: u32,
}

impl Default for DramGeometry {
    /// 2 channels, 2 ranks, 8 banks, 8 subarrays, 64K rows of 8 KB.
    fn default() -> Self {
        Self {
            channels: 2,
            ranks_per_channel: 2,
            banks_per_rank: 8,
            subarrays_per_bank: 8,
            rows_per_bank: 65536,
            columns_per_row: 128,
            cacheline_bytes: 64,
        }
    }
}

impl DramGeometry {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            self.channels,
            self.ranks_per_channel,
            self.banks_per_rank,
            self.subarrays_per_bank,
            self.rows_per_bank,
            self.columns_per_row,
            self.cacheline_bytes,
        ];
        if counts.contains(&0) {
            return Err(ConfigError::Geometry("all counts must be at least 1"));
        }
        // The address map slices plain bit fields out of the address.
        if counts.iter().any(|c| !c.is_power_of_two()) {
            return Err(ConfigError::Geometry("all counts must be powers of two"));
        }
        if !self.rows_per_bank.is_multiple_of(self.subarrays_per_bank) {
            return Err(ConfigError::Geometry(
                "rows_per_bank must be divisible by subarrays_per_bank",
            ));
        }
        if self.banks_per_rank > 64 || self.ranks_per_channel > 16 {
            return Err(ConfigError::Geometry("at most 16 ranks of 64 banks per channel"));
        }
        if self.subarrays_per_bank > u32::from(u16::MAX) || self.columns_per_row > u32::from(u16::MAX) {
            return Err(ConfigError::Geometry("subarray and column counts must fit in 16 bits"));
        }
        Ok(())
    }

    pub fn rows_per_subarray(&self) -> u32 {
        self.rows_per_bank / self.subarrays_per_bank
    }

    pub fn banks_per_channel(&self) -> usize {
        (self.ranks_per_channel * self.banks_per_rank) as usize
    }

    pub fn capacity_bytes(&self) -> u64 {
        u64::from(self.channels)
            * u64::from(self.ranks_per_channel)
            * u64::from(self.banks_per_rank)
            * u64::from(self.rows_per_bank)
            * u64::from(self.columns_per_row)
            * u64::from(self.cacheline_bytes)
    }
}

/// Chip density and the refresh latency/retention that goes with it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityProfile {
    pub density_gbit: u32,
    pub trfc_ab_ns: f64,
    pub retention_ms: f64,
}

impl DensityProfile {
    pub fn for_density(density_gbit: u32) -> Result<Self, ConfigError> {
        let trfc_ab_ns = match density_gbit {
            8 => 350.0,
            16 => 530.0,
            32 => 890.0,
            other => return Err(ConfigError::UnknownDensity(other)),
        };
        Ok(Self {
            density_gbit,
            trfc_ab_ns,
            retention_ms: 32.0,
        })
    }
}

/// Datasheet timings in nanoseconds (DDR3-1333 by default).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawTiming {
    pub tck_ns: f64,
    pub trcd_ns: f64,
    pub trp_ns: f64,
    pub tcl_ns: f64,
    pub tcwl_ns: f64,
    pub tras_ns: f64,
    pub trrd_ns: f64,
    pub tfaw_ns: f64,
    pub twtr_ns: f64,
    pub trtp_ns: f64,
    pub twr_ns: f64,
    /// Read-to-write turnaround; derived from tCL, tBURST and tCWL when unset.
    pub trtw_ns: Option<f64>,
    pub tburst_cycles: Cycle,
    pub refresh_slots: u32,
}

impl Default for RawTiming {
    fn default() -> Self {
        Self {
            tck_ns: 1.5,
            trcd_ns: 13.5,
            trp_ns: 13.5,
            tcl_ns: 13.5,
            tcwl_ns: 10.5,
            tras_ns: 36.0,
            trrd_ns: 6.0,
            tfaw_ns: 30.0,
            twtr_ns: 7.5,
            trtp_ns: 7.5,
            twr_ns: 15.0,
            trtw_ns: None,
            tburst_cycles: 4,
            refresh_slots: DEFAULT_REFRESH_SLOTS,
        }
    }
}

/// Currents in milliamps (arbitrary but consistent scale) and supply voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentParams {
    pub i_act: f64,
    pub i_ref_ab: f64,
    pub i_ref_pb: f64,
    pub i_bg_active: f64,
    pub i_bg_precharged: f64,
    pub i_rd: f64,
    pub i_wr: f64,
    pub vdd: f64,
}

impl Default for CurrentParams {
    fn default() -> Self {
        Self {
            i_act: 100.0,
            i_ref_ab: 440.0,
            i_ref_pb: 55.0,
            i_bg_active: 45.0,
            i_bg_precharged: 35.0,
            i_rd: 130.0,
            i_wr: 135.0,
            vdd: 1.5,
        }
    }
}

impl CurrentParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = [
            self.i_act,
            self.i_ref_ab,
            self.i_ref_pb,
            self.i_bg_active,
            self.i_bg_precharged,
            self.i_rd,
            self.i_wr,
            self.vdd,
        ];
        if all.iter().any(|&c| !(c > 0.0)) {
            return Err(ConfigError::Currents("all currents and vdd must be positive"));
        }
        if self.i_ref_pb > self.i_ref_ab {
            return Err(ConfigError::Currents("per-bank refresh current exceeds all-bank"));
        }
        Ok(())
    }

    /// Every current (not the voltage) multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            i_act: self.i_act * k,
            i_ref_ab: self.i_ref_ab * k,
            i_ref_pb: self.i_ref_pb * k,
            i_bg_active: self.i_bg_active * k,
            i_bg_precharged: self.i_bg_precharged * k,
            i_rd: self.i_rd * k,
            i_wr: self.i_wr * k,
            vdd: self.vdd,
        }
    }
}

/// Which refresh command a policy issues; selects the current used to scale
/// tFAW/tRRD while a refresh is in flight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshScope {
    AllBank,
    PerBank,
}

/// DDR4 fine-granularity refresh mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum FgrMode {
    #[default]
    X1,
    X2,
    X4,
}

impl FgrMode {
    pub const ALL: [FgrMode; 3] = [FgrMode::X1, FgrMode::X2, FgrMode::X4];

    /// Refresh-rate multiplier.
    pub fn rate(self) -> u32 {
        match self {
            FgrMode::X1 => 1,
            FgrMode::X2 => 2,
            FgrMode::X4 => 4,
        }
    }

    /// Factor by which tRFCab shrinks in this mode.
    pub fn trfc_divisor(self) -> f64 {
        match self {
            FgrMode::X1 => 1.0,
            FgrMode::X2 => 1.35,
            FgrMode::X4 => 1.63,
        }
    }

    pub fn index(self) -> usize {
        match self {
            FgrMode::X1 => 0,
            FgrMode::X2 => 1,
            FgrMode::X4 => 2,
        }
    }
}

/// All timing constraints in command-clock cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingParams {
    pub tck_ns: f64,
    pub trcd: Cycle,
    pub trp: Cycle,
    pub tcl: Cycle,
    pub tcwl: Cycle,
    pub tras: Cycle,
    pub trc: Cycle,
    pub trrd: Cycle,
    pub tfaw: Cycle,
    pub twtr: Cycle,
    pub trtw: Cycle,
    pub trtp: Cycle,
    pub twr: Cycle,
    pub tburst: Cycle,
    pub trfc_ab: Cycle,
    pub trfc_pb: Cycle,
    pub trefi_ab: Cycle,
    pub trefi_pb: Cycle,
    /// tFAW enforced while a refresh is in flight in the rank.
    pub tfaw_ref: Cycle,
    /// tRRD enforced while a refresh is in flight in the rank.
    pub trrd_ref: Cycle,
    /// Mode `trfc_ab`/`trefi_ab` were derived for.
    pub fgr: FgrMode,
    /// 1x all-bank refresh latency and interval in nanoseconds; the FGR
    /// variants are always derived from these.
    pub trfc_ab_1x_ns: f64,
    pub trefi_ab_1x_ns: f64,
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = [
            self.trcd,
            self.trp,
            self.tcl,
            self.tcwl,
            self.tras,
            self.trc,
            self.trrd,
            self.tfaw,
            self.twtr,
            self.trtw,
            self.trtp,
            self.twr,
            self.tburst,
            self.trfc_ab,
            self.trfc_pb,
            self.trefi_ab,
            self.trefi_pb,
            self.tfaw_ref,
            self.trrd_ref,
        ];
        if all.contains(&0) {
            return Err(ConfigError::Timing("every constraint must be at least one cycle"));
        }
        if self.tfaw < self.trrd {
            return Err(ConfigError::Timing("tFAW < tRRD"));
        }
        if self.tfaw_ref < self.tfaw || self.trrd_ref < self.trrd {
            return Err(ConfigError::Timing("refresh-scaled tFAW/tRRD below base values"));
        }
        if self.trfc_pb >= self.trfc_ab {
            return Err(ConfigError::Timing("tRFCpb must be shorter than tRFCab"));
        }
        if self.trefi_pb > self.trefi_ab {
            return Err(ConfigError::Timing("tREFIpb exceeds tREFIab"));
        }
        if self.trfc_ab >= self.trefi_ab {
            return Err(ConfigError::Timing("tRFCab does not fit in tREFIab"));
        }
        Ok(())
    }

    /// All-bank refresh latency for an FGR mode, from the 1x nanosecond value.
    pub fn trfc_ab_for(&self, mode: FgrMode) -> Cycle {
        ceil_cycles(self.trfc_ab_1x_ns / mode.trfc_divisor(), self.tck_ns)
    }

    /// All-bank refresh interval for an FGR mode.
    pub fn trefi_ab_for(&self, mode: FgrMode) -> Cycle {
        floor_cycles(self.trefi_ab_1x_ns / f64::from(mode.rate()), self.tck_ns)
    }

    /// Latency of the column read: data fully returned this many cycles after RD.
    pub fn read_latency(&self) -> Cycle {
        self.tcl + self.tburst
    }
}

fn ceil_cycles(duration_ns: f64, tck_ns: f64) -> Cycle {
    let q = duration_ns / tck_ns;
    libm::ceil(q - q * ROUNDING_SLACK) as Cycle
}

fn floor_cycles(duration_ns: f64, tck_ns: f64) -> Cycle {
    let q = duration_ns / tck_ns;
    libm::floor(q + q * ROUNDING_SLACK) as Cycle
}

/// Converts a duration to cycles, rounding up so no constraint is shortened.
pub fn ns_to_cycles(duration_ns: f64, tck_ns: f64) -> Result<Cycle, ConfigError> {
    if !(tck_ns > 0.0) {
        return Err(ConfigError::NonPositiveClock(tck_ns));
    }
    if duration_ns < 0.0 || duration_ns.is_nan() {
        return Err(ConfigError::NegativeDuration(duration_ns));
    }
    Ok(ceil_cycles(duration_ns, tck_ns))
}

/// Ratio by which activation-rate limits grow when a refresh draws `i_ref`
/// alongside a full four-activate window.
pub fn power_overhead_faw(i_act: f64, i_ref: f64) -> Result<f64, ConfigError> {
    if !(i_act > 0.0) {
        return Err(ConfigError::NonPositiveActCurrent(i_act));
    }
    Ok((4.0 * i_act + i_ref) / (4.0 * i_act))
}

/// Derives cycle-level timing for a density, geometry and refresh scope.
pub fn derive_timing(
    profile: &DensityProfile,
    geometry: &DramGeometry,
    base: &RawTiming,
    currents: &CurrentParams,
    scope: RefreshScope,
) -> Result<TimingParams, ConfigError> {
    // Hand-built profiles must still name a supported density.
    DensityProfile::for_density(profile.density_gbit)?;
    if !(profile.trfc_ab_ns > 0.0) || !(profile.retention_ms > 0.0) {
        return Err(ConfigError::Timing("refresh latency and retention must be positive"));
    }
    geometry.validate()?;
    if base.refresh_slots == 0 || base.tburst_cycles == 0 {
        return Err(ConfigError::Timing("refresh_slots and tBURST must be positive"));
    }

    let tck = base.tck_ns;
    let c = |ns: f64| ns_to_cycles(ns, tck);

    let trcd = c(base.trcd_ns)?;
    let trp = c(base.trp_ns)?;
    let tcl = c(base.tcl_ns)?;
    let tcwl = c(base.tcwl_ns)?;
    let tras = c(base.tras_ns)?;
    let trrd = c(base.trrd_ns)?;
    let tfaw = c(base.tfaw_ns)?;
    let tburst = base.tburst_cycles;
    let trtw = match base.trtw_ns {
        Some(ns) => c(ns)?,
        None => (tcl + tburst + 2).saturating_sub(tcwl).max(1),
    };

    let i_ref = match scope {
        RefreshScope::AllBank => currents.i_ref_ab,
        RefreshScope::PerBank => currents.i_ref_pb,
    };
    let overhead = power_overhead_faw(currents.i_act, i_ref)?;

    let trefi_ab_ns = profile.retention_ms * 1e6 / f64::from(base.refresh_slots);
    let trefi_ab = floor_cycles(trefi_ab_ns, tck);

    let timing = TimingParams {
        tck_ns: tck,
        trcd,
        trp,
        tcl,
        tcwl,
        tras,
        trc: c(base.tras_ns + base.trp_ns)?,
        trrd,
        tfaw,
        twtr: c(base.twtr_ns)?,
        trtw,
        trtp: c(base.trtp_ns)?,
        twr: c(base.twr_ns)?,
        tburst,
        trfc_ab: c(profile.trfc_ab_ns)?,
        trfc_pb: c(profile.trfc_ab_ns / TRFC_AB_TO_PB_RATIO)?,
        trefi_ab,
        trefi_pb: trefi_ab / Cycle::from(geometry.banks_per_rank),
        tfaw_ref: c(base.tfaw_ns * overhead)?.max(tfaw),
        trrd_ref: c(base.trrd_ns * overhead)?.max(trrd),
        fgr: FgrMode::X1,
        trfc_ab_1x_ns: profile.trfc_ab_ns,
        trefi_ab_1x_ns: trefi_ab_ns,
    };
    timing.validate()?;
    Ok(timing)
}

/// Switches an all-bank timing set to an FGR mode: the refresh interval
/// shrinks by the rate multiplier and tRFCab by 1.35 (2x) or 1.63 (4x).
pub fn fgr_timing(base: &TimingParams, mode: FgrMode) -> TimingParams {
    if mode == base.fgr {
        return base.clone();
    }
    TimingParams {
        trfc_ab: base.trfc_ab_for(mode),
        trefi_ab: base.trefi_ab_for(mode),
        fgr: mode,
        ..base.clone()
    }
}

/// Refresh time spent per 1x refresh interval in an FGR mode, relative to 1x.
pub fn fgr_worst_case_inflation(mode: FgrMode) -> f64 {
    f64::from(mode.rate()) / mode.trfc_divisor()
}

/// Rows each refresh command must cover so the whole bank is refreshed once
/// per retention window.
pub fn rows_per_refresh(geometry: &DramGeometry, retention_ms: f64, trefi: Cycle, tck_ns: f64) -> u32 {
    let interval_ns = trefi as f64 * tck_ns;
    let q = f64::from(geometry.rows_per_bank) * interval_ns / (retention_ms * 1e6);
    let rows = libm::ceil(q - q * ROUNDING_SLACK) as u32;
    rows.clamp(1, geometry.rows_per_bank)
}
