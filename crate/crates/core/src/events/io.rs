use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Event, EventStream, Polarity, SensorSize};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"EVS1";
const HEADER_LEN: usize = 4 + 4 + 4 + 8;
const RECORD_LEN: usize = 8 + 2 + 2 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Binary,
}

impl EventFormat {
    /// `.csv` is CSV, anything else the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Binary,
        }
    }
}

/// Loads a stream. CSV carries no header, so `csv_sensor` supplies the
/// sensor geometry for that format.
pub fn load_events(path: &Path, format: EventFormat, csv_sensor: SensorSize) -> Result<EventStream> {
    match format {
        EventFormat::Csv => load_csv(path, csv_sensor),
        EventFormat::Binary => load_binary(path),
    }
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, name: &str) -> Result<T, String> {
    let raw = field.ok_or_else(|| format!("missing field `{name}`"))?.trim();
    raw.parse()
        .map_err(|_| format!("field `{name}` is not a valid integer: {raw:?}"))
}

fn parse_row(line: &str) -> Result<Event, String> {
    let mut it = line.split(',');
    let t = parse_field::<u64>(it.next(), "t")?;
    let x = parse_field::<u16>(it.next(), "x")?;
    let y = parse_field::<u16>(it.next(), "y")?;
    let p = parse_field::<i8>(it.next(), "p")?;
    if it.next().is_some() {
        return Err("expected exactly 4 fields".into());
    }
    let p = Polarity::from_i8(p).ok_or_else(|| format!("polarity must be -1 or 1, got {p}"))?;
    Ok(Event { t, x, y, p })
}

/// Header-less `t,x,y,p` lines. Blank lines are ignored.
pub fn load_csv(path: &Path, sensor: SensorSize) -> Result<EventStream> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = parse_row(&line).map_err(|msg| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        })?;
        events.push(ev);
    }
    EventStream::new(sensor, events)
}

pub fn save_csv(stream: &EventStream, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    for e in stream.events() {
        writeln!(w, "{},{},{},{}", e.t, e.x, e.y, e.p.as_i8())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_binary(stream: &EventStream, mut w: impl Write) -> Result<()> {
    let s = stream.sensor();
    let mut buf = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&s.height.to_le_bytes());
    buf.extend_from_slice(&s.width.to_le_bytes());
    buf.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.p.as_i8() as u8);
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_binary(mut r: impl Read) -> Result<EventStream> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::Format("missing EVS1 header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let sensor = SensorSize::new(u32_at(4), u32_at(8));
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let expected = (count as u128) * RECORD_LEN as u128 + HEADER_LEN as u128;
    if expected != bytes.len() as u128 {
        return Err(Error::Format(format!(
            "header announces {count} events ({expected} bytes) but file has {} bytes",
            bytes.len()
        )));
    }
    let mut events = Vec::with_capacity(count as usize);
    for rec in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN) {
        let p = rec[12] as i8;
        events.push(Event {
            t: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
            x: u16::from_le_bytes(rec[8..10].try_into().unwrap()),
            y: u16::from_le_bytes(rec[10..12].try_into().unwrap()),
            p: Polarity::from_i8(p).ok_or_else(|| Error::Format(format!("invalid polarity byte {p}")))?,
        });
    }
    EventStream::new(sensor, events)
}

pub fn save_binary(stream: &EventStream, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    write_binary(stream, BufWriter::new(file))
}

pub fn load_binary(path: &Path) -> Result<EventStream> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_binary(BufReader::new(file))
}

/// One line of a JSON-lines dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
