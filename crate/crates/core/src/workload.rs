//! Memory request sources: traces, synthetic generators, address mapping
//! and the per-core front end.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::DramGeometry;
use crate::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReqKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    /// Non-memory instructions preceding the access.
    pub bubble: u32,
    pub addr: u64,
    pub kind: ReqKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceParseError {
    pub line: usize,
    pub message: alloc::string::String,
}

impl core::fmt::Display for TraceParseError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl core::error::Error for TraceParseError {}

/// Parses one trace line: `<bubble_count> <hex_address> <R|W>`. Returns
/// `Ok(None)` for blank and `#` comment lines. `line_no` is only used in the
/// error.
pub fn parse_trace_line(line: &str, line_no: usize) -> Result<Option<TraceRecord>, TraceParseError> {
    let text = line.trim();
    if text.is_empty() || text.starts_with('#') {
        return Ok(None);
    }
    let err = |message: alloc::string::String| TraceParseError { line: line_no, message };
    let mut fields = text.split_whitespace();
    let (Some(b), Some(a), Some(k), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
        return Err(err(format!("expected 3 fields, got `{text}`")));
    };
    let bubble = b.parse::<u32>().map_err(|_| err(format!("bad bubble count `{b}`")))?;
    let hex = a.strip_prefix("0x").or_else(|| a.strip_prefix("0X")).unwrap_or(a);
    let addr = u64::from_str_radix(hex, 16).map_err(|_| err(format!("bad address `{a}`")))?;
    let kind = match k {
        "R" | "r" => ReqKind::Read,
        "W" | "w" => ReqKind::Write,
        _ => return Err(err(format!("bad access kind `{k}`"))),
    };
    Ok(Some(TraceRecord {
        bubble,
        addr: addr & !63,
        kind,
    }))
}

/// Parses a whole trace held in memory.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceParseError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(r) = parse_trace_line(line, i + 1)? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Uniform random cacheline accesses over a footprint.
#[derive(Debug, Clone)]
pub struct SynthRandom {
    rng: ChaCha8Rng,
    lines: u64,
    read_fraction: f64,
    /// ln(1 - p) of the geometric bubble distribution; `None` for zero bubbles.
    log_q: Option<f64>,
}

impl SynthRandom {
    pub fn new(seed: u64, footprint_bytes: u64, read_fraction: f64, intensity: f64) -> Result<Self, ConfigError> {
        if footprint_bytes < 64 {
            return Err(ConfigError::Workload("footprint smaller than a cacheline".into()));
        }
        if !(0.0..=1.0).contains(&read_fraction) {
            return Err(ConfigError::Workload("read_fraction outside [0, 1]".into()));
        }
        if !(intensity >= 0.0) || !intensity.is_finite() {
            return Err(ConfigError::Workload(
                "intensity must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            lines: footprint_bytes / 64,
            read_fraction,
            log_q: geometric_log_q(intensity),
        })
    }
}

/// Geometric distribution on {0, 1, ...} with the given mean: q = m / (1 + m).
fn geometric_log_q(mean: f64) -> Option<f64> {
    (mean > 0.0).then(|| libm::log(mean / (1.0 + mean)))
}

fn draw_bubble(rng: &mut ChaCha8Rng, log_q: Option<f64>) -> u32 {
    match log_q {
        None => 0,
        Some(lq) => {
            let u: f64 = 1.0 - rng.gen::<f64>();
            let k = libm::floor(libm::log(u) / lq);
            if k >= f64::from(u32::MAX) {
                u32::MAX
            } else {
                k as u32
            }
        }
    }
}

impl Iterator for SynthRandom {
    type Item = TraceRecord;

    fn next(&mut self) -> Option<TraceRecord> {
        let bubble = draw_bubble(&mut self.rng, self.log_q);
        let addr = self.rng.gen_range(0..self.lines) * 64;
        let kind = if self.rng.gen::<f64>() < self.read_fraction {
            ReqKind::Read
        } else {
            ReqKind::Write
        };
        Some(TraceRecord { bubble, addr, kind })
    }
}

/// Sequential strided accesses wrapping over a footprint.
#[derive(Debug, Clone)]
pub struct SynthStream {
    rng: ChaCha8Rng,
    footprint: u64,
    stride: u64,
    next_addr: u64,
    read_fraction: f64,
    log_q: Option<f64>,
}

impl SynthStream {
    pub fn new(seed: u64, footprint_bytes: u64, stride: u64) -> Result<Self, ConfigError> {
        if stride < 64 {
            return Err(ConfigError::Workload("stride smaller than a cacheline".into()));
        }
        if footprint_bytes < stride {
            return Err(ConfigError::Workload("footprint smaller than the stride".into()));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            footprint: footprint_bytes,
            stride,
            next_addr: 0,
            read_fraction: 1.0,
            log_q: None,
        })
    }

    pub fn with_read_fraction(mut self, read_fraction: f64) -> Self {
        self.read_fraction = read_fraction;
        self
    }

    pub fn with_intensity(mut self, intensity: f64) -> Self {
        self.log_q = geometric_log_q(intensity);
        self
    }
}

impl Iterator for SynthStream {
    type Item = TraceRecord;

    fn next(&mut self) -> Option<TraceRecord> {
        let bubble = draw_bubble(&mut self.rng, self.log_q);
        let addr = self.next_addr & !63;
        self.next_addr += self.stride;
        if self.next_addr >= self.footprint {
            self.next_addr = 0;
        }
        let kind = if self.read_fraction >= 1.0 || self.rng.gen::<f64>() < self.read_fraction {
            ReqKind::Read
        } else {
            ReqKind::Write
        };
        Some(TraceRecord { bubble, addr, kind })
    }
}

/// Endless record source feeding one core. File traces replay from the start
/// when exhausted.
#[derive(Debug, Clone)]
pub enum TraceSource {
    Random(SynthRandom),
    Stream(SynthStream),
    Looped { records: Arc<Vec<TraceRecord>>, pos: usize },
}

impl TraceSource {
    pub fn looped(records: Arc<Vec<TraceRecord>>) -> Result<Self, ConfigError> {
        if records.is_empty() {
            return Err(ConfigError::Workload("empty trace".into()));
        }
        Ok(TraceSource::Looped { records, pos: 0 })
    }

    pub fn next_record(&mut self) -> TraceRecord {
        match self {
            TraceSource::Random(g) => g.next().expect("endless"),
            TraceSource::Stream(g) => g.next().expect("endless"),
            TraceSource::Looped { records, pos } => {
                let r = records[*pos];
                *pos = (*pos + 1) % records.len();
                r
            }
        }
    }
}

/// DRAM coordinates of a cacheline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DecodedAddress {
    pub channel: u8,
    pub rank: u8,
    pub bank: u8,
    pub row: u32,
    pub column: u16,
}

/// Fixed bit-field mapping, lowest to highest:
/// `[offset][channel][column][bank][rank][row]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressMap {
    offset_bits: u32,
    channel_bits: u32,
    column_bits: u32,
    bank_bits: u32,
    rank_bits: u32,
    row_bits: u32,
}

impl AddressMap {
    pub fn new(g: &DramGeometry) -> Result<Self, ConfigError> {
        g.validate()?;
        if !g.cacheline_bytes.is_power_of_two() {
            return Err(ConfigError::Geometry("cacheline size must be a power of two"));
        }
        Ok(Self {
            offset_bits: g.cacheline_bytes.trailing_zeros(),
            channel_bits: g.channels.trailing_zeros(),
            column_bits: g.columns_per_row.trailing_zeros(),
            bank_bits: g.banks_per_rank.trailing_zeros(),
            rank_bits: g.ranks_per_channel.trailing_zeros(),
            row_bits: g.rows_per_bank.trailing_zeros(),
        })
    }

    pub fn address_bits(&self) -> u32 {
        self.offset_bits + self.channel_bits + self.column_bits + self.bank_bits + self.rank_bits + self.row_bits
    }

    /// Decodes a byte address; bits above the mapped capacity are ignored.
    pub fn decode(&self, addr: u64) -> DecodedAddress {
        let mut a = addr >> self.offset_bits;
        let mut take = |bits: u32| {
            let v = a & ((1u64 << bits) - 1);
            a >>= bits;
            v
        };
        let channel = take(self.channel_bits) as u8;
        let column = take(self.column_bits) as u16;
        let bank = take(self.bank_bits) as u8;
        let rank = take(self.rank_bits) as u8;
        let row = take(self.row_bits) as u32;
        DecodedAddress {
            channel,
            rank,
            bank,
            row,
            column,
        }
    }

    pub fn encode(&self, d: &DecodedAddress) -> u64 {
        let mut a = u64::from(d.row);
        a = (a << self.rank_bits) | u64::from(d.rank);
        a = (a << self.bank_bits) | u64::from(d.bank);
        a = (a << self.column_bits) | u64::from(d.column);
        a = (a << self.channel_bits) | u64::from(d.channel);
        a << self.offset_bits
    }
}

pub const PAGE_BYTES: u64 = 4096;

/// Maps each core's 4 KiB virtual pages onto distinct physical frames with a
/// keyed Feistel permutation, so a small footprint still spreads over every
/// row region of every bank.
#[derive(Debug, Clone, Copy)]
pub struct PageMapper {
    frames: u64,
    half_bits: u32,
    cores: u64,
    keys: [u64; 4],
}

impl PageMapper {
    pub fn new(capacity_bytes: u64, cores: usize, seed: u64) -> Self {
        let frames = (capacity_bytes / PAGE_BYTES).max(1);
        let bits = 64 - (frames - 1).leading_zeros();
        let half_bits = bits.div_ceil(2).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        Self {
            frames,
            half_bits,
            cores: cores.max(1) as u64,
            keys: [rng.gen(), rng.gen(), rng.gen(), rng.gen()],
        }
    }

    fn round(&self, x: u64, key: u64) -> u64 {
        let mut h = x.wrapping_add(key).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 29;
        h & ((1u64 << self.half_bits) - 1)
    }

    fn permute_once(&self, x: u64) -> u64 {
        let mask = (1u64 << self.half_bits) - 1;
        let (mut l, mut r) = (x >> self.half_bits, x & mask);
        for &k in &self.keys {
            let t = l ^ self.round(r, k);
            l = r;
            r = t;
        }
        (l << self.half_bits) | r
    }

    /// Bijection on `0..frames` (cycle walking over the padded domain).
    pub fn permute(&self, frame: u64) -> u64 {
        let mut x = self.permute_once(frame);
        while x >= self.frames {
            x = self.permute_once(x);
        }
        x
    }

    pub fn translate(&self, core: usize, vaddr: u64) -> u64 {
        let vpage = vaddr / PAGE_BYTES;
        let index = (vpage.wrapping_mul(self.cores) + core as u64) % self.frames;
        self.permute(index) * PAGE_BYTES + vaddr % PAGE_BYTES
    }
}

pub const ISSUE_WIDTH: u32 = 3;
pub const WINDOW_CAPACITY: u32 = 128;
pub const MSHR_CAPACITY: u32 = 8;
/// Core cycles per DRAM command cycle (4 GHz against 666.67 MHz).
pub const CORE_CLOCK_RATIO: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WindowEntry {
    Bubbles(u32),
    Read { id: u64, ready: Option<u64> },
}

/// What the front end needs from the memory system each time a core issues.
pub trait MemoryPort {
    /// Offers an access; `None` is backpressure, otherwise the request id.
    fn offer(&mut self, core: usize, kind: ReqKind, addr: u64) -> Option<u64>;
}

/// Window/MSHR-limited core front end, clocked in core cycles.
#[derive(Debug, Clone)]
pub struct CoreModel {
    pub index: usize,
    source: TraceSource,
    window: VecDeque<WindowEntry>,
    occupancy: u32,
    outstanding: u32,
    /// Bubbles of the current record not yet in the window.
    bubbles_left: u32,
    pending: Option<TraceRecord>,
    /// The core cannot make progress before this core cycle (or before a
    /// read completes, which resets it).
    idle_until: u64,
    pub retired: u64,
    pub cycles: u64,
    pub reads_issued: u64,
    pub writes_issued: u64,
    pub reads_completed: u64,
    pub stall_mshr: u64,
    pub stall_backpressure: u64,
}

impl CoreModel {
    pub fn new(index: usize, source: TraceSource) -> Self {
        Self {
            index,
            source,
            window: VecDeque::new(),
            occupancy: 0,
            outstanding: 0,
            bubbles_left: 0,
            pending: None,
            idle_until: 0,
            retired: 0,
            cycles: 0,
            reads_issued: 0,
            writes_issued: 0,
            reads_completed: 0,
            stall_mshr: 0,
            stall_backpressure: 0,
        }
    }

    pub fn occupancy(&self) -> u32 {
        self.occupancy
    }

    pub fn outstanding_reads(&self) -> u32 {
        self.outstanding
    }

    pub fn ipc(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.retired as f64 / self.cycles as f64
        }
    }

    pub fn reset_counters(&mut self) {
        self.retired = 0;
        self.cycles = 0;
        self.reads_issued = 0;
        self.writes_issued = 0;
        self.reads_completed = 0;
        self.stall_mshr = 0;
        self.stall_backpressure = 0;
    }

    /// Read `id` has its data back at core cycle `ready`.
    pub fn complete(&mut self, id: u64, ready: u64) {
        for e in self.window.iter_mut() {
            if let WindowEntry::Read { id: rid, ready: r } = e {
                if *rid == id {
                    *r = Some(ready);
                    self.idle_until = 0;
                    self.outstanding -= 1;
                    self.reads_completed += 1;
                    return;
                }
            }
        }
        panic!("core {}: completion for unknown read {id}", self.index);
    }

    /// One core cycle: retire, then issue.
    pub fn tick(&mut self, now: u64, port: &mut dyn MemoryPort) {
        self.cycles += 1;
        if now < self.idle_until {
            return;
        }
        let retired = self.retire(now);
        let progress = self.issue(port);
        if retired == 0 && progress == Issue::Stalled {
            // Only a read completion or the head read's return can unblock.
            self.idle_until = match self.window.front() {
                Some(WindowEntry::Read { ready: Some(r), .. }) => *r,
                _ => u64::MAX,
            };
        }
    }

    fn retire(&mut self, now: u64) -> u32 {
        let mut budget = ISSUE_WIDTH;
        while budget > 0 {
            match self.window.front_mut() {
                Some(WindowEntry::Bubbles(n)) => {
                    let k = (*n).min(budget);
                    *n -= k;
                    budget -= k;
                    self.occupancy -= k;
                    self.retired += u64::from(k);
                    if *n == 0 {
                        self.window.pop_front();
                    }
                }
                Some(WindowEntry::Read { ready: Some(r), .. }) if *r <= now => {
                    self.window.pop_front();
                    budget -= 1;
                    self.occupancy -= 1;
                    self.retired += 1;
                }
                _ => break,
            }
        }
        ISSUE_WIDTH - budget
    }

    fn push_bubbles(&mut self, k: u32) {
        if let Some(WindowEntry::Bubbles(n)) = self.window.back_mut() {
            *n += k;
        } else {
            self.window.push_back(WindowEntry::Bubbles(k));
        }
        self.occupancy += k;
    }

    fn issue(&mut self, port: &mut dyn MemoryPort) -> Issue {
        let mut slots = ISSUE_WIDTH;
        while slots > 0 {
            let rec = match self.pending {
                Some(r) => r,
                None => {
                    let r = self.source.next_record();
                    self.bubbles_left = r.bubble;
                    self.pending = Some(r);
                    r
                }
            };
            if self.bubbles_left > 0 {
                let room = WINDOW_CAPACITY - self.occupancy;
                let k = self.bubbles_left.min(slots).min(room);
                if k == 0 {
                    return Issue::stalled(slots);
                }
                self.push_bubbles(k);
                self.bubbles_left -= k;
                slots -= k;
                continue;
            }
            match rec.kind {
                ReqKind::Read => {
                    if self.occupancy >= WINDOW_CAPACITY {
                        return Issue::stalled(slots);
                    }
                    if self.outstanding >= MSHR_CAPACITY {
                        self.stall_mshr += 1;
                        return Issue::stalled(slots);
                    }
                    let Some(id) = port.offer(self.index, ReqKind::Read, rec.addr) else {
                        self.stall_backpressure += 1;
                        return Issue::Progress;
                    };
                    self.window.push_back(WindowEntry::Read { id, ready: None });
                    self.occupancy += 1;
                    self.outstanding += 1;
                    self.reads_issued += 1;
                }
                ReqKind::Write => {
                    if port.offer(self.index, ReqKind::Write, rec.addr).is_none() {
                        self.stall_backpressure += 1;
                        return Issue::Progress;
                    }
                    // Posted: retires at once without occupying the window.
                    self.retired += 1;
                    self.writes_issued += 1;
                }
            }
            self.pending = None;
            slots -= 1;
        }
        Issue::Progress
    }
}

/// Outcome of an issue attempt. Backpressure counts as progress since the
/// queue may drain next cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Issue {
    Progress,
    Stalled,
}

impl Issue {
    fn stalled(slots_left: u32) -> Self {
        if slots_left == ISSUE_WIDTH {
            Issue::Stalled
        } else {
            Issue::Progress
        }
    }
}
