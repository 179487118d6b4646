//! Trace files.
//!
//! CSV layout (schema 1):
//!
//! ```text
//! # encircle-trace schema=1
//! # <scenario TOML, one line per comment>
//! k,x1x,x1y,x2x,x2y,sx,sy,shx,shy,u1x,u1y,u2x,u2y,d12,d1s,d2s,hx,hy,ehat,es,impulse,sat1,sat2
//! ...
//! ```
//!
//! JSONL carries the same information: a header object
//! `{"schema":1,"config":"<scenario TOML>"}` then one object per step keyed by
//! the CSV column names. Floats are written in shortest round-trip form, so
//! reading a trace back reproduces every value bit for bit.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::geometry::PlanarVector;
use crate::scenario::{load_scenario, ScenarioError};
use crate::sim::{SimError, StepRecord, Trace};

pub const SCHEMA_VERSION: u32 = 1;
const SCHEMA_LINE: &str = "# encircle-trace schema=1";

pub const COLUMNS: [&str; 23] = [
    "k", "x1x", "x1y", "x2x", "x2y", "sx", "sy", "shx", "shy", "u1x", "u1y", "u2x", "u2y", "d12",
    "d1s", "d2s", "hx", "hy", "ehat", "es", "impulse", "sat1", "sat2",
];

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a trace file: {0}")]
    BadHeader(String),
    #[error("unsupported trace schema {0}")]
    Schema(u32),
    #[error("trace is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("trace row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("embedded scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("trace does not replay: {0}")]
    Replay(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Jsonl,
}

/// One flat row; field names are the column names.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Row {
    k: u64,
    x1x: f64,
    x1y: f64,
    x2x: f64,
    x2y: f64,
    sx: f64,
    sy: f64,
    shx: f64,
    shy: f64,
    u1x: f64,
    u1y: f64,
    u2x: f64,
    u2y: f64,
    d12: f64,
    d1s: f64,
    d2s: f64,
    hx: f64,
    hy: f64,
    ehat: f64,
    es: f64,
    impulse: u8,
    sat1: u8,
    sat2: u8,
}

impl From<&StepRecord> for Row {
    fn from(r: &StepRecord) -> Self {
        Row {
            k: r.k,
            x1x: r.x1.x,
            x1y: r.x1.y,
            x2x: r.x2.x,
            x2y: r.x2.y,
            sx: r.s.x,
            sy: r.s.y,
            shx: r.s_hat.x,
            shy: r.s_hat.y,
            u1x: r.u1.x,
            u1y: r.u1.y,
            u2x: r.u2.x,
            u2y: r.u2.y,
            d12: r.d12,
            d1s: r.d1s,
            d2s: r.d2s,
            hx: r.h.x,
            hy: r.h.y,
            ehat: r.e_hat_norm,
            es: r.e_s_norm,
            impulse: r.impulse as u8,
            sat1: r.saturated1 as u8,
            sat2: r.saturated2 as u8,
        }
    }
}

impl From<Row> for StepRecord {
    fn from(r: Row) -> Self {
        let v = PlanarVector::new;
        StepRecord {
            k: r.k,
            x1: v(r.x1x, r.x1y),
            x2: v(r.x2x, r.x2y),
            s: v(r.sx, r.sy),
            s_hat: v(r.shx, r.shy),
            u1: v(r.u1x, r.u1y),
            u2: v(r.u2x, r.u2y),
            d12: r.d12,
            d1s: r.d1s,
            d2s: r.d2s,
            h: v(r.hx, r.hy),
            e_hat_norm: r.ehat,
            e_s_norm: r.es,
            impulse: r.impulse != 0,
            saturated1: r.sat1 != 0,
            saturated2: r.sat2 != 0,
        }
    }
}

/// JSON object for one record, keyed by the CSV column names.
pub fn record_to_json(r: &StepRecord) -> serde_json::Value {
    serde_json::to_value(Row::from(r)).expect("row serializes")
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    schema: u32,
    config: String,
}

pub fn write_trace<W: Write>(trace: &Trace, format: TraceFormat, out: W) -> Result<(), TraceError> {
    match format {
        TraceFormat::Csv => write_csv(trace, out),
        TraceFormat::Jsonl => write_jsonl(trace, out),
    }
}

pub fn write_csv<W: Write>(trace: &Trace, mut out: W) -> Result<(), TraceError> {
    writeln!(out, "{SCHEMA_LINE}")?;
    for line in trace.config.to_toml().lines() {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in &trace.records {
        w.serialize(Row::from(r))
            .map_err(|e| TraceError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(trace: &Trace, mut out: W) -> Result<(), TraceError> {
    let header = JsonlHeader {
        schema: SCHEMA_VERSION,
        config: trace.config.to_toml(),
    };
    writeln!(
        out,
        "{}",
        serde_json::to_string(&header).expect("header serializes")
    )?;
    for r in &trace.records {
        writeln!(out, "{}", record_to_json(r))?;
    }
    Ok(())
}

/// Reads a CSV or JSONL trace (detected from the first byte) and replays it.
pub fn read_trace<R: BufRead>(mut input: R) -> Result<Trace, TraceError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    if text.trim_start().starts_with('{') {
        read_jsonl(&text)
    } else {
        read_csv(&text)
    }
}

fn read_csv(text: &str) -> Result<Trace, TraceError> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    if !first.starts_with("# encircle-trace") {
        return Err(TraceError::BadHeader(first.chars().take(60).collect()));
    }
    let schema = first
        .split_once("schema=")
        .and_then(|(_, v)| v.trim().parse::<u32>().ok())
        .ok_or_else(|| TraceError::BadHeader(first.to_string()))?;
    if schema != SCHEMA_VERSION {
        return Err(TraceError::Schema(schema));
    }

    let mut config_text = String::new();
    let mut body_start = first.len() + 1;
    for line in lines {
        if let Some(rest) = line.strip_prefix('#') {
            config_text.push_str(rest.strip_prefix(' ').unwrap_or(rest));
            config_text.push('\n');
            body_start += line.len() + 1;
        } else {
            break;
        }
    }
    let config = load_scenario(&config_text)?;

    let body = text.get(body_start..).unwrap_or_default();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| TraceError::Row {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    for col in COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(TraceError::MissingColumn(col));
        }
    }
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| TraceError::Row {
            row: i + 1,
            message: e.to_string(),
        })?;
        records.push(StepRecord::from(row));
    }
    Ok(Trace::replay(config, records)?)
}

fn read_jsonl(text: &str) -> Result<Trace, TraceError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().unwrap_or_default();
    let header: JsonlHeader =
        serde_json::from_str(first).map_err(|e| TraceError::BadHeader(e.to_string()))?;
    if header.schema != SCHEMA_VERSION {
        return Err(TraceError::Schema(header.schema));
    }
    let config = load_scenario(&header.config)?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| TraceError::Row {
            row: i + 1,
            message: e.to_string(),
        })?;
        for col in COLUMNS {
            if value.get(col).is_none() {
                return Err(TraceError::MissingColumn(col));
            }
        }
        let row: Row = serde_json::from_value(value).map_err(|e| TraceError::Row {
            row: i + 1,
            message: e.to_string(),
        })?;
        records.push(StepRecord::from(row));
    }
    Ok(Trace::replay(config, records)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::paper_scenario;
    use crate::sim::run_scenario;

    fn csv_bytes(trace: &Trace) -> Vec<u8> {
        let mut buf = Vec::new();
        write_csv(trace, &mut buf).unwrap();
        buf
    }

    #[test]
    fn csv_is_lossless() {
        let t = run_scenario(&paper_scenario().with_seed(3)).unwrap();
        let bytes = csv_bytes(&t);
        let back = read_trace(bytes.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(csv_bytes(&back), bytes);
    }

    #[test]
    fn jsonl_is_lossless() {
        let mut cfg = paper_scenario().with_seed(4);
        cfg.run.range_noise_std = 0.02;
        let t = run_scenario(&cfg).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&t, &mut buf).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn header_columns_in_order() {
        let t = run_scenario(&paper_scenario()).unwrap();
        let text = String::from_utf8(csv_bytes(&t)).unwrap();
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, COLUMNS.join(","));
        assert!(text.starts_with(SCHEMA_LINE));
    }

    #[test]
    fn missing_column_named() {
        let mut cfg = paper_scenario();
        cfg.run.steps = 5;
        let t = run_scenario(&cfg).unwrap();
        let text = String::from_utf8(csv_bytes(&t)).unwrap();
        let mut out = String::new();
        for line in text.lines() {
            if line.starts_with('#') {
                out.push_str(line);
            } else {
                // drop the 17th column (hx)
                let cells: Vec<&str> = line.split(',').collect();
                let kept: Vec<&str> = cells
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != 16)
                    .map(|(_, c)| *c)
                    .collect();
                out.push_str(&kept.join(","));
            }
            out.push('\n');
        }
        match read_trace(out.as_bytes()) {
            Err(TraceError::MissingColumn(c)) => assert_eq!(c, "hx"),
            other => panic!("expected missing column, got {other:?}"),
        }
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(matches!(
            read_trace("a,b\n1,2\n".as_bytes()),
            Err(TraceError::BadHeader(_))
        ));
        let future = "# encircle-trace schema=2\n";
        assert!(matches!(
            read_trace(future.as_bytes()),
            Err(TraceError::Schema(2))
        ));
    }
}
