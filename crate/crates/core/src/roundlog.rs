//! Plain-text round log.
//!
//! ```text
//! #dataset <monitor-id> <monitor-address>
//! #param <key> <value>
//! #round <index> <start> <end>
//! <source> <ttl> <destination>
//! ...
//! #end
//! ```
//!
//! One line per probe, in emission order, `*` for a timeout. Fields are
//! separated by exactly one space and lines end with `\n`. A round that was
//! aborted carries an `#incomplete` line before `#end`. The `#dataset` and
//! `#param` lines are optional for bare round logs and must precede the first
//! round.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::net::Ipv4Addr;

use crate::error::LogError;
use crate::filter::filter_tree;
use crate::model::{
    Hop, ProbeRecord, RadarDataset, RawTraceTree, RoundMeta, RoundRecord, DEFAULT_MAX_TTL,
    MAX_TTL_LIMIT,
};

/// Dataset-level header of a log file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub monitor_id: String,
    pub monitor: Ipv4Addr,
    pub parameters: BTreeMap<String, String>,
}

impl DatasetHeader {
    pub fn max_ttl(&self) -> u8 {
        self.parameters
            .get("max_ttl")
            .and_then(|v| v.parse().ok())
            .filter(|t| (1..=MAX_TTL_LIMIT).contains(t))
            .unwrap_or(DEFAULT_MAX_TTL)
    }
}

/// A parsed log file: optional header and every round block.
#[derive(Debug, Clone, PartialEq)]
pub struct LogFile {
    pub header: Option<DatasetHeader>,
    pub rounds: Vec<(RoundMeta, RawTraceTree)>,
}

/// Destination of completed rounds.
pub trait RoundSink {
    fn header(&mut self, header: &DatasetHeader) -> io::Result<()>;
    fn round(&mut self, meta: &RoundMeta, raw: &RawTraceTree) -> io::Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl RoundSink for NullSink {
    fn header(&mut self, _: &DatasetHeader) -> io::Result<()> {
        Ok(())
    }

    fn round(&mut self, _: &RoundMeta, _: &RawTraceTree) -> io::Result<()> {
        Ok(())
    }
}

/// Streams rounds to any writer in the log format, flushing after each round.
pub struct RoundLogWriter<W: Write> {
    inner: W,
}

impl<W: Write> RoundLogWriter<W> {
    pub fn new(inner: W) -> Self {
        RoundLogWriter { inner }
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> RoundSink for RoundLogWriter<W> {
    fn header(&mut self, header: &DatasetHeader) -> io::Result<()> {
        self.inner.write_all(serialize_header(header).as_bytes())?;
        self.inner.flush()
    }

    fn round(&mut self, meta: &RoundMeta, raw: &RawTraceTree) -> io::Result<()> {
        self.inner.write_all(serialize_round(raw, meta).as_bytes())?;
        self.inner.flush()
    }
}

pub fn serialize_header(header: &DatasetHeader) -> String {
    let mut out = String::new();
    let id: String = header
        .monitor_id
        .chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect();
    let id = if id.is_empty() { "-".to_string() } else { id };
    let _ = writeln!(out, "#dataset {} {}", id, header.monitor);
    for (k, v) in &header.parameters {
        let _ = writeln!(out, "#param {} {}", k, v);
    }
    out
}

pub fn serialize_round(raw: &RawTraceTree, meta: &RoundMeta) -> String {
    let mut out = String::with_capacity(32 + raw.records().len() * 28);
    let _ = writeln!(
        out,
        "#round {} {} {}",
        meta.index, meta.start_time, meta.end_time
    );
    for r in raw.records() {
        let _ = writeln!(out, "{} {} {}", r.source, r.ttl, r.destination);
    }
    if meta.incomplete {
        out.push_str("#incomplete\n");
    }
    out.push_str("#end\n");
    out
}

/// Serializes a whole dataset. Every round must have kept its raw records.
pub fn serialize_dataset(dataset: &RadarDataset) -> Result<String, LogError> {
    let mut out = serialize_header(&DatasetHeader {
        monitor_id: dataset.monitor_id.clone(),
        monitor: dataset.monitor,
        parameters: dataset.parameters.clone(),
    });
    for round in dataset.rounds() {
        let raw = round
            .raw
            .as_ref()
            .ok_or(LogError::NoRawRecords(round.meta.index))?;
        out.push_str(&serialize_round(raw, &round.meta));
    }
    Ok(out)
}

/// Parses the round blocks of a log, checking TTLs against `max_ttl`.
pub fn parse_round_log(text: &str, max_ttl: u8) -> Result<Vec<(RoundMeta, RawTraceTree)>, LogError> {
    parse(text, Some(max_ttl)).map(|f| f.rounds)
}

/// Parses a full log file. TTLs are checked against the header's `max_ttl`
/// parameter, or the default of 30.
pub fn parse_log(text: &str) -> Result<LogFile, LogError> {
    parse(text, None)
}

/// Parses a log file and filters every round into a dataset.
pub fn load_dataset(text: &str) -> Result<RadarDataset, LogError> {
    let file = parse_log(text)?;
    let header = file.header.ok_or(LogError::MissingHeader)?;
    let mut ds = RadarDataset::new(header.monitor_id.clone(), header.monitor);
    ds.parameters = header.parameters;
    for (meta, raw) in file.rounds {
        let (tree, _) = filter_tree(&raw, header.monitor);
        ds.push(RoundRecord {
            meta,
            probes_sent: raw.probes(),
            tree,
            raw: Some(raw),
        })
        .map_err(|source| LogError::Model { line: 0, source })?;
    }
    Ok(ds)
}

fn syntax(line: usize, message: impl Into<String>) -> LogError {
    LogError::Syntax {
        line,
        message: message.into(),
    }
}

fn fields(line: &str) -> Vec<&str> {
    line.split(' ').collect()
}

struct OpenRound {
    line: usize,
    meta: RoundMeta,
    records: Vec<ProbeRecord>,
}

fn parse(text: &str, fixed_max_ttl: Option<u8>) -> Result<LogFile, LogError> {
    let mut header: Option<DatasetHeader> = None;
    let mut rounds = Vec::new();
    let mut open: Option<OpenRound> = None;
    let mut max_ttl = fixed_max_ttl.unwrap_or(DEFAULT_MAX_TTL);

    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if let Some(cur) = open.as_mut() {
            match line {
                "#end" => {
                    let cur = open.take().expect("open round");
                    let raw = RawTraceTree::from_records(cur.records).map_err(|source| {
                        LogError::Model {
                            line: cur.line,
                            source,
                        }
                    })?;
                    rounds.push((cur.meta, raw));
                }
                "#incomplete" => cur.meta.incomplete = true,
                _ if line.starts_with('#') => {
                    return Err(syntax(n, format!("unexpected `{line}` inside a round")))
                }
                _ => cur.records.push(parse_record(line, n, max_ttl)?),
            }
            continue;
        }

        if line.is_empty() {
            continue;
        }
        let f = fields(line);
        match f[0] {
            "#round" => {
                if f.len() != 4 {
                    return Err(syntax(n, "expected `#round <index> <start> <end>`"));
                }
                if let (None, Some(h)) = (fixed_max_ttl, header.as_ref()) {
                    max_ttl = h.max_ttl();
                }
                let index = f[1]
                    .parse()
                    .map_err(|_| syntax(n, format!("bad round index `{}`", f[1])))?;
                let start = parse_time(f[2], n)?;
                let end = parse_time(f[3], n)?;
                open = Some(OpenRound {
                    line: n,
                    meta: RoundMeta::new(index, start, end),
                    records: Vec::new(),
                });
            }
            "#dataset" if rounds.is_empty() && header.is_none() => {
                if f.len() != 3 {
                    return Err(syntax(n, "expected `#dataset <monitor-id> <address>`"));
                }
                let monitor = f[2]
                    .parse()
                    .map_err(|_| syntax(n, format!("bad monitor address `{}`", f[2])))?;
                header = Some(DatasetHeader {
                    monitor_id: f[1].to_string(),
                    monitor,
                    parameters: BTreeMap::new(),
                });
            }
            "#param" if rounds.is_empty() && header.is_some() => {
                let rest = &line["#param ".len().min(line.len())..];
                let (k, v) = rest
                    .split_once(' ')
                    .ok_or_else(|| syntax(n, "expected `#param <key> <value>`"))?;
                if let Some(h) = header.as_mut() {
                    h.parameters.insert(k.to_string(), v.to_string());
                }
            }
            _ => return Err(syntax(n, format!("unexpected line `{line}`"))),
        }
    }
    if let Some(cur) = open {
        return Err(syntax(cur.line, "round not terminated by `#end`"));
    }
    Ok(LogFile { header, rounds })
}

fn parse_time(s: &str, line: usize) -> Result<f64, LogError> {
    s.parse::<f64>()
        .ok()
        .filter(|t| t.is_finite())
        .ok_or_else(|| syntax(line, format!("bad timestamp `{s}`")))
}

fn parse_record(line: &str, n: usize, max_ttl: u8) -> Result<ProbeRecord, LogError> {
    let f = fields(line);
    if f.len() != 3 {
        return Err(syntax(n, "expected `<source> <ttl> <destination>`"));
    }
    let source: Hop = f[0]
        .parse()
        .map_err(|_| syntax(n, format!("bad source `{}`", f[0])))?;
    let ttl: u64 = f[1]
        .parse()
        .map_err(|_| syntax(n, format!("bad ttl `{}`", f[1])))?;
    if ttl == 0 || ttl > u64::from(max_ttl) {
        return Err(LogError::Range {
            line: n,
            ttl,
            max: max_ttl,
        });
    }
    let destination: Ipv4Addr = f[2]
        .parse()
        .map_err(|_| syntax(n, format!("bad destination `{}`", f[2])))?;
    Ok(ProbeRecord::new(source, ttl as u8, destination))
}
