//! File formats: trace files (optionally gzip), refresh logs, command traces
//! and latency histograms.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use refsim_core::engine::{CommandKind, DramCommand};
use refsim_core::metrics::LatencyHistogram;
use refsim_core::refresh::{RefreshClass, RefreshLogEntry};
use refsim_core::workload::{parse_trace_line, ReqKind, TraceParseError, TraceRecord};
use refsim_core::Cycle;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Trace {
        path: PathBuf,
        #[source]
        source: TraceParseError,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn open_reader(path: &Path) -> Result<Box<dyn BufRead>, FormatError> {
    let f = File::open(path).map_err(io_err(path))?;
    let inner: Box<dyn Read> = if is_gzip(path) {
        Box::new(GzDecoder::new(f))
    } else {
        Box::new(f)
    };
    Ok(Box::new(BufReader::new(inner)))
}

/// Reads a trace file; `.gz` files are decompressed.
pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, FormatError> {
    let reader = open_reader(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if let Some(r) = parse_trace_line(&line, i + 1).map_err(|source| FormatError::Trace {
            path: path.to_path_buf(),
            source,
        })? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Writes a trace file; `.gz` paths are compressed.
pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<(), FormatError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w: Box<dyn Write> = if is_gzip(path) {
        Box::new(GzEncoder::new(f, Compression::default()))
    } else {
        Box::new(BufWriter::new(f))
    };
    for r in records {
        let k = match r.kind {
            ReqKind::Read => 'R',
            ReqKind::Write => 'W',
        };
        writeln!(w, "{} {:#x} {}", r.bubble, r.addr, k).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub const REFRESH_LOG_HEADER: &str = "cycle,kind,channel,rank,bank,credit_after,class";

/// One refresh-log row: the entry and the channel it was issued on.
pub fn write_refresh_log<W: Write>(mut w: W, channels: &[&[RefreshLogEntry]]) -> io::Result<()> {
    writeln!(w, "{REFRESH_LOG_HEADER}")?;
    // Merge channels by cycle; ties keep channel order.
    let mut rows: Vec<(Cycle, usize, &RefreshLogEntry)> = channels
        .iter()
        .enumerate()
        .flat_map(|(ch, log)| log.iter().map(move |e| (e.cycle, ch, e)))
        .collect();
    rows.sort_by_key(|&(c, ch, _)| (c, ch));
    for (_, ch, e) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            e.cycle,
            e.kind.mnemonic(),
            ch,
            e.rank,
            e.bank,
            e.credit_after,
            e.class.name()
        )?;
    }
    Ok(())
}

/// Parses a refresh log back into per-channel entries.
pub fn read_refresh_log<R: BufRead>(r: R, channels: usize) -> Result<Vec<Vec<RefreshLogEntry>>, FormatError> {
    let mut out = vec![Vec::new(); channels];
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| FormatError::Io {
            path: PathBuf::from("<refresh log>"),
            source,
        })?;
        if line_no == 1 && line == REFRESH_LOG_HEADER || line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| FormatError::Malformed { line: line_no, message };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<i64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let kind = CommandKind::from_mnemonic(f[1])
            .filter(|k| k.is_refresh())
            .ok_or_else(|| bad(format!("not a refresh command: `{}`", f[1])))?;
        let ch = num(f[2])? as usize;
        if ch >= channels {
            return Err(bad(format!("channel {ch} out of range")));
        }
        out[ch].push(RefreshLogEntry {
            cycle: num(f[0])? as Cycle,
            kind,
            rank: num(f[3])? as u8,
            bank: num(f[4])? as u8,
            credit_after: num(f[5])? as i8,
            class: RefreshClass::parse(f[6]).ok_or_else(|| bad(format!("unknown class `{}`", f[6])))?,
            during_writeback: false,
        });
    }
    Ok(out)
}

/// Tab-separated `cycle kind ch rank bank subarray row col`, one command per line.
pub fn write_command_trace<W: Write>(mut w: W, history: &[(DramCommand, Cycle)]) -> io::Result<()> {
    for (c, t) in history {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t,
            c.kind.mnemonic(),
            c.channel,
            c.rank,
            c.bank,
            c.subarray,
            c.row,
            c.column
        )?;
    }
    Ok(())
}

pub fn read_command_trace<R: BufRead>(r: R) -> Result<Vec<(DramCommand, Cycle)>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| FormatError::Io {
            path: PathBuf::from("<command trace>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| FormatError::Malformed { line: line_no, message };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(bad(format!("expected 8 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let kind = CommandKind::from_mnemonic(f[1]).ok_or_else(|| bad(format!("unknown command `{}`", f[1])))?;
        let cmd = DramCommand {
            kind,
            channel: num(f[2])? as u8,
            rank: num(f[3])? as u8,
            bank: num(f[4])? as u8,
            subarray: num(f[5])? as u16,
            row: num(f[6])? as u32,
            column: num(f[7])? as u16,
        };
        out.push((cmd, num(f[0])?));
    }
    Ok(out)
}

pub fn write_latency_histogram<W: Write>(mut w: W, h: &LatencyHistogram) -> io::Result<()> {
    writeln!(w, "latency_cycles,count")?;
    for (lat, n) in h.iter() {
        writeln!(w, "{lat},{n}")?;
    }
    Ok(())
}

/// Creates `path` for buffered writing.
pub fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}
