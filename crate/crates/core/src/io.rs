//! Trace files, CSV tables and JSON documents.
//!
//! Trace file layout, all little-endian:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4  | magic `QPHS` |
//! | 4  | 4  | format version (u32) |
//! | 8  | 8  | shot count N (u64) |
//! | 16 | 4  | samples per shot (u32) |
//! | 20 | 8  | dt in ns (f64) |
//! | 28 | 8  | start time in ns (f64) |
//! | 36 | 4  | flags (u32), bit 0: emission flags appended |
//! | 40 | 24 | zero padding |
//!
//! The header is followed by N records of interleaved f32 `I, Q` pairs and,
//! when flagged, one byte (0 or 1) per shot.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use num_complex::Complex32;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::shot_sim::TraceSet;

pub const MAGIC: [u8; 4] = *b"QPHS";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;
const FLAG_EMISSION: u32 = 1;

fn header(set: &TraceSet) -> Result<[u8; HEADER_LEN]> {
    let spp = u32::try_from(set.samples_per_shot())
        .map_err(|_| Error::domain("samples per shot does not fit the u32 header field"))?;
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&MAGIC);
    h[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h[8..16].copy_from_slice(&(set.shots() as u64).to_le_bytes());
    h[16..20].copy_from_slice(&spp.to_le_bytes());
    h[20..28].copy_from_slice(&set.dt().to_le_bytes());
    h[28..36].copy_from_slice(&set.start_time().to_le_bytes());
    let flags = if set.emission_flags().is_some() { FLAG_EMISSION } else { 0 };
    h[36..40].copy_from_slice(&flags.to_le_bytes());
    Ok(h)
}

/// Serialises `set` to `writer`.
pub fn write_traces_to<W: Write>(writer: &mut W, set: &TraceSet) -> std::io::Result<()> {
    let h = header(set).map_err(|e| std::io::Error::new(ErrorKind::InvalidInput, e.to_string()))?;
    writer.write_all(&h)?;
    let mut buf = Vec::with_capacity(set.samples_per_shot() * 8);
    for trace in set.traces() {
        buf.clear();
        for z in trace.samples {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        writer.write_all(&buf)?;
    }
    if let Some(flags) = set.emission_flags() {
        let bytes: Vec<u8> = flags.iter().map(|&f| f as u8).collect();
        writer.write_all(&bytes)?;
    }
    Ok(())
}

pub fn write_traces(path: &Path, set: &TraceSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_traces_to(&mut w, set)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads and validates a trace stream; `label` names the source in I/O errors.
pub fn read_traces_from<R: Read>(reader: &mut R, label: &Path) -> Result<TraceSet> {
    let mut h = [0u8; HEADER_LEN];
    let got = read_full(reader, &mut h).map_err(|e| Error::io(label, e))?;
    if got < HEADER_LEN {
        return Err(Error::format(got as u64, format!("header truncated after {got} of {HEADER_LEN} bytes")));
    }
    if h[0..4] != MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}, expected \"QPHS\"", String::from_utf8_lossy(&h[0..4]))));
    }
    let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(h[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::format(4, format!("unsupported format version {version}")));
    }
    let shots = u64::from_le_bytes(h[8..16].try_into().unwrap());
    if shots == 0 {
        return Err(Error::format(8, "shot count is zero"));
    }
    let spp = u32_at(16) as usize;
    if spp == 0 {
        return Err(Error::format(16, "samples per shot is zero"));
    }
    let dt = f64_at(20);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::format(20, format!("sample period {dt} is not positive")));
    }
    let start = f64_at(28);
    if !start.is_finite() {
        return Err(Error::format(28, "start time is not finite"));
    }
    let flags = u32_at(36);
    if flags & !FLAG_EMISSION != 0 {
        return Err(Error::format(36, format!("unknown flag bits {flags:#x}")));
    }
    if let Some(i) = h[40..].iter().position(|&b| b != 0) {
        return Err(Error::format(40 + i as u64, "reserved header bytes are not zero"));
    }

    let total = usize::try_from(shots)
        .ok()
        .and_then(|n| n.checked_mul(spp))
        .filter(|&t| t.checked_mul(8).is_some())
        .ok_or_else(|| Error::format(8, format!("{shots} x {spp} samples cannot be addressed")))?;
    let mut data = Vec::new();
    data.try_reserve_exact(total)
        .map_err(|e| Error::Resource(format!("cannot hold {total} samples: {e}")))?;
    let mut buf = vec![0u8; spp * 8];
    let mut offset = HEADER_LEN as u64;
    for _ in 0..shots {
        let got = read_full(reader, &mut buf).map_err(|e| Error::io(label, e))?;
        if got < buf.len() {
            return Err(Error::format(offset + got as u64, format!("payload truncated: {} samples expected", total)));
        }
        for (k, pair) in buf.chunks_exact(8).enumerate() {
            let re = f32::from_le_bytes(pair[0..4].try_into().unwrap());
            let im = f32::from_le_bytes(pair[4..8].try_into().unwrap());
            if !(re.is_finite() && im.is_finite()) {
                return Err(Error::format(offset + 8 * k as u64, "non-finite sample"));
            }
            data.push(Complex32::new(re, im));
        }
        offset += buf.len() as u64;
    }

    let emission = if flags & FLAG_EMISSION != 0 {
        let mut bytes = vec![0u8; shots as usize];
        let got = read_full(reader, &mut bytes).map_err(|e| Error::io(label, e))?;
        if got < bytes.len() {
            return Err(Error::format(offset + got as u64, "emission flags truncated"));
        }
        if let Some(i) = bytes.iter().position(|&b| b > 1) {
            return Err(Error::format(offset + i as u64, format!("emission flag byte {} is not 0 or 1", bytes[i])));
        }
        offset += bytes.len() as u64;
        Some(bytes.into_iter().map(|b| b == 1).collect())
    } else {
        None
    };
    let mut probe = [0u8; 1];
    if read_full(reader, &mut probe).map_err(|e| Error::io(label, e))? != 0 {
        return Err(Error::format(offset, "trailing bytes after payload"));
    }

    TraceSet::from_parts(data, spp, dt, start, emission, None)
        .map_err(|e| Error::format(HEADER_LEN as u64, e.to_string()))
}

pub fn read_traces(path: &Path) -> Result<TraceSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_traces_from(&mut BufReader::new(file), path)
}

/// Like `read_exact`, but reports how much was read instead of failing at EOF.
fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// A CSV table with a one-line header.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Column `name` parsed as numbers.
    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .column(name)
            .ok_or_else(|| Error::domain(format!("no column named {name}")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[j].parse::<f64>()
                    .map_err(|_| Error::domain(format!("row {i}, column {name}: {:?} is not a number", r[j])))
            })
            .collect()
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        x.to_string()
    }
}

pub fn write_csv(path: &Path, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(&table.header).map_err(|e| csv_error(path, e))?;
    for row in &table.rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| csv_error(path, e))?;
    Ok(Table { header, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(offset, format!("{}: {other:?}", path.display())),
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::domain(format!("cannot serialise {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a JSON configuration; syntax and schema problems are configuration errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::config(format!("{} line {} column {}: {e}", path.display(), e.line(), e.column()))
    })
}
