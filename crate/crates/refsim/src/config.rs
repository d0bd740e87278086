//! Line-oriented experiment configuration.
//!
//! ```text
//! # comment
//! policy = dsarp, pb        # one or more, comma or space separated
//! density = 32
//! [geometry]
//! channels = 2
//! [workload]
//! kind = random
//! [core.3]
//! kind = stream
//! ```
//!
//! Every key has a default (the evaluated system of the reference setup), so
//! an empty file is a valid configuration. Unknown sections and keys are
//! errors. The full key list is in the README.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use refsim_core::controller::QueueConfig;
use refsim_core::geometry::DensityProfile;
use refsim_core::system::SystemConfig;
use refsim_core::{ConfigError, CurrentParams, DramGeometry, PolicyKind, RawTiming};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key `{key}`{}", section_suffix(.section))]
    UnknownKey {
        line: usize,
        section: Option<String>,
        key: String,
    },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    InvalidValue { line: usize, key: String, message: String },
    #[error(transparent)]
    Invalid(#[from] ConfigError),
    #[error("{0}")]
    Other(String),
}

fn section_suffix(section: &Option<String>) -> String {
    match section {
        Some(s) => format!(" in [{s}]"),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkloadKind {
    Random,
    Stream,
    Trace,
}

impl WorkloadKind {
    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::Random => "random",
            WorkloadKind::Stream => "stream",
            WorkloadKind::Trace => "trace",
        }
    }
}

impl FromStr for WorkloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(WorkloadKind::Random),
            "stream" => Ok(WorkloadKind::Stream),
            "trace" => Ok(WorkloadKind::Trace),
            _ => Err(format!("expected random, stream or trace, got `{s}`")),
        }
    }
}

/// What one core runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreWorkload {
    pub kind: WorkloadKind,
    pub footprint_bytes: u64,
    pub read_fraction: f64,
    /// Mean non-memory instructions between accesses.
    pub intensity: f64,
    pub stride: u64,
    pub trace: Option<PathBuf>,
}

impl Default for CoreWorkload {
    fn default() -> Self {
        Self {
            kind: WorkloadKind::Random,
            footprint_bytes: 64 << 20,
            read_fraction: 0.7,
            intensity: 20.0,
            stride: 64,
            trace: None,
        }
    }
}

/// A named multi-core mix; one CSV row per (policy, density) for each.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub name: String,
    pub cores: Vec<CoreWorkload>,
}

/// Which solo runs supply the alone IPC of weighted speedup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AloneBaseline {
    /// Solo run without refresh at the same density, shared by every policy.
    NoRefresh,
    /// Solo run under the cell's own policy.
    SamePolicy,
}

impl FromStr for AloneBaseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "noref" => Ok(AloneBaseline::NoRefresh),
            "same" => Ok(AloneBaseline::SamePolicy),
            _ => Err(format!("expected noref or same, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub geometry: DramGeometry,
    pub raw: RawTiming,
    pub currents: CurrentParams,
    pub queues: QueueConfig,
    pub trfc_ab_ns: Option<f64>,
    pub retention_ms: Option<f64>,
    pub policies: Vec<PolicyKind>,
    pub densities: Vec<u32>,
    pub seed: u64,
    pub warmup_cycles: u64,
    pub measured_cycles: u64,
    pub alone: AloneBaseline,
    pub workloads: Vec<Workload>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geometry: DramGeometry::default(),
            raw: RawTiming::default(),
            currents: CurrentParams::default(),
            queues: QueueConfig::default(),
            trfc_ab_ns: None,
            retention_ms: None,
            policies: vec![PolicyKind::AllBank],
            densities: vec![8],
            seed: 0,
            warmup_cycles: 1_000_000,
            measured_cycles: 50_000_000,
            alone: AloneBaseline::NoRefresh,
            workloads: vec![Workload {
                name: "random".into(),
                cores: vec![CoreWorkload::default(); 8],
            }],
        }
    }
}

impl SimConfig {
    /// The core-crate configuration of one sweep cell.
    pub fn system(&self, policy: PolicyKind, density_gbit: u32) -> Result<SystemConfig, ConfigError> {
        let mut density = DensityProfile::for_density(density_gbit)?;
        if let Some(t) = self.trfc_ab_ns {
            density.trfc_ab_ns = t;
        }
        if let Some(r) = self.retention_ms {
            density.retention_ms = r;
        }
        Ok(SystemConfig {
            geometry: self.geometry,
            density,
            raw: self.raw,
            currents: self.currents,
            queues: self.queues,
            policy,
            seed: self.seed,
            warmup_cycles: self.warmup_cycles,
            measured_cycles: self.measured_cycles,
            record_commands: false,
        })
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), ConfigFileError> {
        if self.measured_cycles == 0 {
            return Err(ConfigFileError::Other("measured_cycles must be positive".into()));
        }
        if self.policies.is_empty() || self.densities.is_empty() {
            return Err(ConfigFileError::Other("empty policy or density list".into()));
        }
        if self.workloads.is_empty() {
            return Err(ConfigFileError::Other("no workload".into()));
        }
        for w in &self.workloads {
            if w.cores.is_empty() {
                return Err(ConfigFileError::Other(format!("workload `{}` has no cores", w.name)));
            }
            if !valid_name(&w.name) {
                return Err(ConfigFileError::Other(format!(
                    "workload name `{}` may only use letters, digits, `-`, `_` and `.`",
                    w.name
                )));
            }
            for c in &w.cores {
                if c.kind == WorkloadKind::Trace && c.trace.is_none() {
                    return Err(ConfigFileError::Other(format!(
                        "workload `{}`: kind = trace needs a trace path",
                        w.name
                    )));
                }
                if !(0.0..=1.0).contains(&c.read_fraction) {
                    return Err(ConfigFileError::Other("read_fraction must lie in [0, 1]".into()));
                }
            }
        }
        for &p in &self.policies {
            for &d in &self.densities {
                self.system(p, d)?.timing()?;
            }
        }
        self.queues.validate()?;
        Ok(())
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

fn parse_value<T: FromStr>(e: &Entry) -> Result<T, ConfigFileError>
where
    T::Err: fmt::Display,
{
    e.value.parse().map_err(|err: T::Err| ConfigFileError::InvalidValue {
        line: e.line,
        key: e.key.clone(),
        message: err.to_string(),
    })
}

fn parse_list<T: FromStr>(e: &Entry) -> Result<Vec<T>, ConfigFileError>
where
    T::Err: fmt::Display,
{
    let items: Vec<&str> = e
        .value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(ConfigFileError::InvalidValue {
            line: e.line,
            key: e.key.clone(),
            message: "empty list".into(),
        });
    }
    items
        .into_iter()
        .map(|s| {
            s.parse().map_err(|err: T::Err| ConfigFileError::InvalidValue {
                line: e.line,
                key: e.key.clone(),
                message: err.to_string(),
            })
        })
        .collect()
}

/// `u64` that also accepts `_` separators and `k`/`M` suffixes (1M = 10^6).
struct Count(u64);

impl FromStr for Count {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.replace('_', "");
        let (digits, mul) = match s.strip_suffix('M') {
            Some(d) => (d, 1_000_000),
            None => match s.strip_suffix('k') {
                Some(d) => (d, 1_000),
                None => (s.as_str(), 1),
            },
        };
        let n: u64 = if let Some(hex) = digits.strip_prefix("0x") {
            u64::from_str_radix(hex, 16).map_err(|e| e.to_string())?
        } else {
            digits.parse().map_err(|e: std::num::ParseIntError| e.to_string())?
        };
        n.checked_mul(mul)
            .map(Count)
            .ok_or_else(|| "value overflows".to_string())
    }
}

fn count(e: &Entry) -> Result<u64, ConfigFileError> {
    parse_value::<Count>(e).map(|c| c.0)
}

fn count32(e: &Entry) -> Result<u32, ConfigFileError> {
    u32::try_from(count(e)?).map_err(|_| ConfigFileError::InvalidValue {
        line: e.line,
        key: e.key.clone(),
        message: "value exceeds 32 bits".into(),
    })
}

fn unknown(e: &Entry, section: &str) -> ConfigFileError {
    ConfigFileError::UnknownKey {
        line: e.line,
        section: Some(section.to_string()),
        key: e.key.clone(),
    }
}

fn apply_workload_key(w: &mut CoreWorkload, e: &Entry, section: &str, base_dir: &Path) -> Result<(), ConfigFileError> {
    match e.key.as_str() {
        "kind" => w.kind = parse_value(e)?,
        "footprint_bytes" => w.footprint_bytes = count(e)?,
        "read_fraction" => w.read_fraction = parse_value(e)?,
        "intensity" => w.intensity = parse_value(e)?,
        "stride" => w.stride = count(e)?,
        "trace" => {
            w.trace = Some(base_dir.join(&e.value));
            w.kind = WorkloadKind::Trace;
        }
        _ => return Err(unknown(e, section)),
    }
    Ok(())
}

/// Parses configuration text. Relative trace paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<SimConfig, ConfigFileError> {
    let mut cfg = SimConfig::default();
    let mut cores = 8usize;
    let mut name: Option<String> = None;
    let mut default_core = CoreWorkload::default();
    let mut core_entries: BTreeMap<usize, Vec<Entry>> = BTreeMap::new();
    let mut section: Option<String> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let inner = rest.strip_suffix(']').ok_or_else(|| ConfigFileError::Syntax {
                line,
                message: "unterminated section header".into(),
            })?;
            let inner = inner.trim();
            let known = matches!(inner, "geometry" | "timing" | "currents" | "queues" | "workload")
                || inner.strip_prefix("core.").is_some_and(|n| n.parse::<usize>().is_ok());
            if !known {
                return Err(ConfigFileError::UnknownSection {
                    line,
                    name: inner.to_string(),
                });
            }
            section = Some(inner.to_string());
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigFileError::Syntax {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let e = Entry {
            line,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        };
        if e.key.is_empty() || e.value.is_empty() {
            return Err(ConfigFileError::Syntax {
                line,
                message: "empty key or value".into(),
            });
        }
        match section.as_deref() {
            None => match e.key.as_str() {
                "policy" => {
                    cfg.policies = parse_list::<String>(&e)?
                        .iter()
                        .map(|s| {
                            PolicyKind::parse(s).map_err(|err| ConfigFileError::InvalidValue {
                                line,
                                key: e.key.clone(),
                                message: err.to_string(),
                            })
                        })
                        .collect::<Result<_, _>>()?
                }
                "density" => cfg.densities = parse_list(&e)?,
                "seed" => cfg.seed = count(&e)?,
                "cores" => cores = count(&e)? as usize,
                "warmup_cycles" => cfg.warmup_cycles = count(&e)?,
                "measured_cycles" => cfg.measured_cycles = count(&e)?,
                "alone_policy" => cfg.alone = parse_value(&e)?,
                _ => {
                    return Err(ConfigFileError::UnknownKey {
                        line,
                        section: None,
                        key: e.key,
                    })
                }
            },
            Some("geometry") => {
                let g = &mut cfg.geometry;
                match e.key.as_str() {
                    "channels" => g.channels = count32(&e)?,
                    "ranks_per_channel" => g.ranks_per_channel = count32(&e)?,
                    "banks_per_rank" => g.banks_per_rank = count32(&e)?,
                    "subarrays_per_bank" => g.subarrays_per_bank = count32(&e)?,
                    "rows_per_bank" => g.rows_per_bank = count32(&e)?,
                    "columns_per_row" => g.columns_per_row = count32(&e)?,
                    "cacheline_bytes" => g.cacheline_bytes = count32(&e)?,
                    _ => return Err(unknown(&e, "geometry")),
                }
            }
            Some("timing") => {
                let t = &mut cfg.raw;
                match e.key.as_str() {
                    "tck_ns" => t.tck_ns = parse_value(&e)?,
                    "trcd_ns" => t.trcd_ns = parse_value(&e)?,
                    "trp_ns" => t.trp_ns = parse_value(&e)?,
                    "tcl_ns" => t.tcl_ns = parse_value(&e)?,
                    "tcwl_ns" => t.tcwl_ns = parse_value(&e)?,
                    "tras_ns" => t.tras_ns = parse_value(&e)?,
                    "trrd_ns" => t.trrd_ns = parse_value(&e)?,
                    "tfaw_ns" => t.tfaw_ns = parse_value(&e)?,
                    "twtr_ns" => t.twtr_ns = parse_value(&e)?,
                    "trtp_ns" => t.trtp_ns = parse_value(&e)?,
                    "twr_ns" => t.twr_ns = parse_value(&e)?,
                    "trtw_ns" => t.trtw_ns = Some(parse_value(&e)?),
                    "tburst_cycles" => t.tburst_cycles = count(&e)?,
                    "refresh_slots" => t.refresh_slots = count32(&e)?,
                    "trfc_ab_ns" => cfg.trfc_ab_ns = Some(parse_value(&e)?),
                    "retention_ms" => cfg.retention_ms = Some(parse_value(&e)?),
                    _ => return Err(unknown(&e, "timing")),
                }
            }
            Some("currents") => {
                let c = &mut cfg.currents;
                match e.key.as_str() {
                    "i_act" => c.i_act = parse_value(&e)?,
                    "i_ref_ab" => c.i_ref_ab = parse_value(&e)?,
                    "i_ref_pb" => c.i_ref_pb = parse_value(&e)?,
                    "i_bg_active" => c.i_bg_active = parse_value(&e)?,
                    "i_bg_precharged" => c.i_bg_precharged = parse_value(&e)?,
                    "i_rd" => c.i_rd = parse_value(&e)?,
                    "i_wr" => c.i_wr = parse_value(&e)?,
                    "vdd" => c.vdd = parse_value(&e)?,
                    _ => return Err(unknown(&e, "currents")),
                }
            }
            Some("queues") => {
                let q = &mut cfg.queues;
                match e.key.as_str() {
                    "read_capacity" => q.read_capacity = count(&e)? as usize,
                    "write_capacity" => q.write_capacity = count(&e)? as usize,
                    "high_watermark" => q.high_watermark = count(&e)? as usize,
                    "low_watermark" => q.low_watermark = count(&e)? as usize,
                    _ => return Err(unknown(&e, "queues")),
                }
            }
            Some("workload") => {
                if e.key == "name" {
                    name = Some(e.value.clone());
                } else {
                    apply_workload_key(&mut default_core, &e, "workload", base_dir)?;
                }
            }
            Some(s) => {
                let idx: usize = s["core.".len()..].parse().expect("checked at the header");
                core_entries.entry(idx).or_default().push(e);
            }
        }
    }

    if cores == 0 {
        return Err(ConfigFileError::Other("cores must be at least 1".into()));
    }
    let mut per_core = vec![default_core.clone(); cores];
    for (idx, entries) in core_entries {
        let slot = per_core.get_mut(idx).ok_or_else(|| ConfigFileError::Syntax {
            line: entries[0].line,
            message: format!("[core.{idx}] but only {cores} cores configured"),
        })?;
        for e in &entries {
            apply_workload_key(slot, e, &format!("core.{idx}"), base_dir)?;
        }
    }
    let name = name.unwrap_or_else(|| {
        if per_core.iter().all(|c| c.kind == per_core[0].kind) {
            per_core[0].kind.name().to_string()
        } else {
            "mix".to_string()
        }
    });
    cfg.workloads = vec![Workload { name, cores: per_core }];
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SimConfig, ConfigFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SimConfig, ConfigFileError> {
        parse_config(text, Path::new("/base"))
    }

    #[test]
    fn density_only_keeps_defaults() {
        let c = parse("density = 32\n").unwrap();
        assert_eq!(c.densities, vec![32]);
        assert_eq!(c.geometry, DramGeometry::default());
        assert_eq!(c.raw, RawTiming::default());
        assert_eq!(c.currents, CurrentParams::default());
        assert_eq!(c.queues, QueueConfig::default());
        assert_eq!(c.warmup_cycles, 1_000_000);
        assert_eq!(c.measured_cycles, 50_000_000);
        assert_eq!(c.workloads[0].cores.len(), 8);
        let t = c.system(PolicyKind::AllBank, 32).unwrap().timing().unwrap();
        assert_eq!(t.trfc_ab, 594);
    }

    #[test]
    fn dsarp_policy_parses() {
        let c = parse("policy = dsarp").unwrap();
        assert_eq!(c.policies, vec![PolicyKind::Dsarp]);
        assert!(c.policies[0].uses_sarp());
    }

    #[test]
    fn unknown_policy_names_the_key() {
        let err = parse("\n\npolicy = banana\n").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("line 3") && msg.contains("policy") && msg.contains("banana"),
            "{msg}"
        );
    }

    #[test]
    fn unknown_key_and_section_rejected() {
        let err = parse("[geometry]\nchanels = 2\n").unwrap_err();
        assert!(matches!(err, ConfigFileError::UnknownKey { line: 2, .. }), "{err}");
        let err = parse("[gemoetry]\n").unwrap_err();
        assert!(matches!(err, ConfigFileError::UnknownSection { line: 1, .. }), "{err}");
        let err = parse("just words\n").unwrap_err();
        assert!(matches!(err, ConfigFileError::Syntax { line: 1, .. }), "{err}");
    }

    #[test]
    fn lists_sections_and_core_overrides() {
        let text = "policy = ab, pb dsarp # trailing comment\n\
                    density = 8,16\n\
                    measured_cycles = 2M\n\
                    cores = 4\n\
                    [timing]\n\
                    tck_ns = 1.25\n\
                    [core.2]\n\
                    kind = stream\n\
                    stride = 128\n\
                    [workload]\n\
                    intensity = 5\n\
                    [core.3]\n\
                    trace = t/a.trace.gz\n";
        let c = parse(text).unwrap();
        assert_eq!(
            c.policies,
            vec![PolicyKind::AllBank, PolicyKind::PerBank, PolicyKind::Dsarp]
        );
        assert_eq!(c.densities, vec![8, 16]);
        assert_eq!(c.measured_cycles, 2_000_000);
        assert_eq!(c.raw.tck_ns, 1.25);
        let w = &c.workloads[0];
        assert_eq!(w.name, "mix");
        assert_eq!(w.cores.len(), 4);
        assert_eq!(w.cores[0].intensity, 5.0);
        // Core overrides apply on top of the [workload] section wherever it appears.
        assert_eq!(w.cores[2].kind, WorkloadKind::Stream);
        assert_eq!(w.cores[2].intensity, 5.0);
        assert_eq!(w.cores[2].stride, 128);
        assert_eq!(w.cores[3].trace.as_deref(), Some(Path::new("/base/t/a.trace.gz")));
    }

    #[test]
    fn core_index_out_of_range() {
        let err = parse("cores = 2\n[core.5]\nkind = stream\n").unwrap_err();
        assert!(matches!(err, ConfigFileError::Syntax { line: 3, .. }), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(matches!(
            parse("density = 12").unwrap_err(),
            ConfigFileError::Invalid(ConfigError::UnknownDensity(12))
        ));
        assert!(parse("measured_cycles = 0").is_err());
        assert!(parse("[workload]\nread_fraction = 1.5").is_err());
        assert!(parse("[workload]\nkind = trace").is_err());
        assert!(parse("[queues]\nlow_watermark = 60").is_err());
        assert!(parse("seed = -1").is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_config(Path::new("/nonexistent/x.cfg")),
            Err(ConfigFileError::Io { .. })
        ));
    }
}
