//! Merges `trace.<node>.<context>.<thread>` files into one timeline.
//!
//! Output line: `<ts_us> <node> <thread> <enter|exit> "<name>"`, sorted by
//! timestamp, ties by node, thread and input order. Timestamps are taken as
//! written; no clock alignment between hosts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use super::{matching_files, read_text, ProfError};
use crate::harness::ProbeKind;
use crate::profiler::format::{quote_name, unquote_name, FileKind, TraceEvent};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedEvent {
    pub ts_us: u64,
    pub node: u32,
    pub thread: u32,
    pub kind: ProbeKind,
    pub name: String,
}

impl fmt::Display for MergedEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.ts_us,
            self.node,
            self.thread,
            self.kind,
            quote_name(&self.name)
        )
    }
}

impl MergedEvent {
    pub fn parse(line: &str) -> Result<Self, String> {
        let mut parts = line.splitn(5, ' ');
        let mut num = |what: &str| -> Result<u64, String> {
            parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| format!("bad {what}"))
        };
        let ts_us = num("timestamp")?;
        let node = num("node")? as u32;
        let thread = num("thread")? as u32;
        let kind = parts.next().and_then(ProbeKind::parse).ok_or("bad event kind")?;
        let (name, rest) = parts.next().and_then(unquote_name).ok_or("bad quoted name")?;
        if !rest.is_empty() {
            return Err("trailing characters".into());
        }
        Ok(MergedEvent {
            ts_us,
            node,
            thread,
            kind,
            name,
        })
    }
}

/// Merges per-stream event lists. Streams are keyed by (node, thread) and
/// must each be in non-decreasing timestamp order.
pub fn merge_streams(streams: &BTreeMap<(u32, u32), Vec<TraceEvent>>) -> Vec<MergedEvent> {
    let mut out: Vec<MergedEvent> = streams
        .iter()
        .flat_map(|(&(node, thread), events)| {
            events.iter().map(move |e| MergedEvent {
                ts_us: e.ts_us,
                node,
                thread,
                kind: e.kind,
                name: e.name.clone(),
            })
        })
        .collect();
    // Stable: equal (ts, node, thread) keep input order.
    out.sort_by_key(|e| (e.ts_us, e.node, e.thread));
    out
}

/// Splits a merged timeline back into per-(node, thread) streams.
pub fn split(events: &[MergedEvent]) -> BTreeMap<(u32, u32), Vec<TraceEvent>> {
    let mut out: BTreeMap<(u32, u32), Vec<TraceEvent>> = BTreeMap::new();
    for e in events {
        out.entry((e.node, e.thread)).or_default().push(TraceEvent {
            ts_us: e.ts_us,
            thread: e.thread,
            kind: e.kind,
            name: e.name.clone(),
        });
    }
    out
}

pub fn encode(events: &[MergedEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

pub fn load_traces(dir: impl AsRef<Path>) -> Result<BTreeMap<(u32, u32), Vec<TraceEvent>>, ProfError> {
    let mut streams = BTreeMap::new();
    for (id, path) in matching_files(dir.as_ref(), FileKind::Trace)? {
        let perr = |line, message| ProfError::Parse {
            path: path.clone(),
            line,
            message,
        };
        let text = read_text(&path)?;
        let mut events = Vec::new();
        let mut last = 0;
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let e = TraceEvent::parse(line).map_err(|m| perr(i + 1, format!("{m}: {line:?}")))?;
            if e.ts_us < last {
                return Err(perr(i + 1, format!("timestamp {} goes backwards from {last}", e.ts_us)));
            }
            last = e.ts_us;
            events.push(e);
        }
        if id.context != 0 {
            return Err(perr(0, format!("unsupported context {}", id.context)));
        }
        streams.insert((id.node, id.thread), events);
    }
    Ok(streams)
}

pub fn merge_traces(dir: impl AsRef<Path>) -> Result<Vec<MergedEvent>, ProfError> {
    let dir = dir.as_ref();
    let streams = load_traces(dir)?;
    if streams.is_empty() {
        return Err(ProfError::Report(format!("no trace files in {}", dir.display())));
    }
    Ok(merge_streams(&streams))
}
