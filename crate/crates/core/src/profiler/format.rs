//! Profile and trace file encodings.
//!
//! Profile file, one LF-terminated line each:
//!
//! ```text
//! <F> functions
//! "<name>" <calls> <subrs> <excl_us> <incl_us>     (F lines, descending excl_us)
//! 0 aggregates
//! # <comment>                                      (optional)
//! ```
//!
//! Trace file: `<ts_us> <thread> <enter|exit> "<name>"` per line.

use std::cmp::Ordering;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use regex::Regex;
use std::sync::OnceLock;

use crate::harness::ProbeKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct ProfileIdentity {
    pub node: u32,
    pub context: u32,
    pub thread: u32,
}

impl ProfileIdentity {
    pub fn new(node: u32, thread: u32) -> Self {
        ProfileIdentity {
            node,
            context: 0,
            thread,
        }
    }

    pub fn profile_file_name(&self) -> String {
        format!("profile.{}.{}.{}", self.node, self.context, self.thread)
    }

    pub fn trace_file_name(&self) -> String {
        format!("trace.{}.{}.{}", self.node, self.context, self.thread)
    }
}

impl fmt::Display for ProfileIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.node, self.context, self.thread)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Profile,
    Trace,
}

/// Recognizes `profile.<n>.<c>.<t>` and `trace.<n>.<c>.<t>` with decimal fields.
pub fn parse_file_name(name: &str) -> Option<(FileKind, ProfileIdentity)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^(profile|trace)\.(\d+)\.(\d+)\.(\d+)$").unwrap());
    let caps = re.captures(name)?;
    let kind = if &caps[1] == "profile" {
        FileKind::Profile
    } else {
        FileKind::Trace
    };
    Some((
        kind,
        ProfileIdentity {
            node: caps[2].parse().ok()?,
            context: caps[3].parse().ok()?,
            thread: caps[4].parse().ok()?,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize)]
pub struct FunctionStats {
    pub name: String,
    pub calls: i64,
    /// Direct child invocations.
    pub subrs: i64,
    pub excl_us: i64,
    pub incl_us: i64,
}

/// Descending exclusive time, ties by name ascending.
pub fn by_exclusive_desc(a: &FunctionStats, b: &FunctionStats) -> Ordering {
    b.excl_us.cmp(&a.excl_us).then_with(|| a.name.cmp(&b.name))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProfileData {
    pub functions: Vec<FunctionStats>,
    /// Comment lines without the leading `# `.
    pub comments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

fn ferr(line: usize, message: impl Into<String>) -> FormatError {
    FormatError {
        line,
        message: message.into(),
    }
}

pub fn quote_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len() + 2);
    out.push('"');
    for c in name.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Parses a leading quoted name; returns it and the rest of the input.
pub fn unquote_name(s: &str) -> Option<(String, &str)> {
    let mut chars = s.char_indices();
    if chars.next()?.1 != '"' {
        return None;
    }
    let mut out = String::new();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => return Some((out, &s[i + 1..])),
            '\\' => match chars.next()?.1 {
                '"' => out.push('"'),
                '\\' => out.push('\\'),
                'n' => out.push('\n'),
                _ => return None,
            },
            c => out.push(c),
        }
    }
    None
}

impl ProfileData {
    pub fn sorted(mut self) -> Self {
        self.functions.sort_by(by_exclusive_desc);
        self
    }

    pub fn get(&self, name: &str) -> Option<&FunctionStats> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn encode(&self) -> String {
        let mut functions = self.functions.clone();
        functions.sort_by(by_exclusive_desc);
        let mut out = String::new();
        writeln!(out, "{} functions", functions.len()).unwrap();
        for f in &functions {
            writeln!(
                out,
                "{} {} {} {} {}",
                quote_name(&f.name),
                f.calls,
                f.subrs,
                f.excl_us,
                f.incl_us
            )
            .unwrap();
        }
        out.push_str("0 aggregates\n");
        for c in &self.comments {
            writeln!(out, "# {c}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let lines: Vec<&str> = text.lines().collect();
        let header = lines.first().ok_or_else(|| ferr(1, "empty file"))?;
        let count: usize = header
            .strip_suffix(" functions")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| ferr(1, format!("expected `<F> functions`, got {header:?}")))?;
        let mut functions = Vec::with_capacity(count);
        for i in 0..count {
            let lineno = i + 2;
            let line = lines
                .get(i + 1)
                .ok_or_else(|| ferr(lineno, format!("expected {count} function lines, file ends")))?;
            functions.push(parse_function_line(line).map_err(|m| ferr(lineno, m))?);
        }
        let agg_line = count + 2;
        match lines.get(count + 1) {
            Some(&"0 aggregates") => {}
            Some(other) => return Err(ferr(agg_line, format!("expected `0 aggregates`, got {other:?}"))),
            None => return Err(ferr(agg_line, "missing `0 aggregates`")),
        }
        let mut comments = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(count + 2) {
            let c = line
                .strip_prefix("# ")
                .or_else(|| (*line == "#").then_some(""))
                .ok_or_else(|| ferr(i + 1, format!("unexpected trailing line {line:?}")))?;
            comments.push(c.to_string());
        }
        Ok(ProfileData { functions, comments })
    }
}

fn parse_function_line(line: &str) -> Result<FunctionStats, String> {
    let (name, rest) = unquote_name(line).ok_or_else(|| format!("bad quoted name in {line:?}"))?;
    let nums: Vec<&str> = rest.split_whitespace().collect();
    if nums.len() != 4 || !rest.starts_with(' ') {
        return Err(format!("expected 4 numeric fields after name in {line:?}"));
    }
    let n = |s: &str| i64::from_str(s).map_err(|_| format!("not an integer: {s:?}"));
    Ok(FunctionStats {
        name,
        calls: n(nums[0])?,
        subrs: n(nums[1])?,
        excl_us: n(nums[2])?,
        incl_us: n(nums[3])?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub ts_us: u64,
    pub thread: u32,
    pub kind: ProbeKind,
    pub name: String,
}

impl TraceEvent {
    pub fn encode(&self) -> String {
        format!(
            "{} {} {} {}",
            self.ts_us,
            self.thread,
            self.kind,
            quote_name(&self.name)
        )
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let mut parts = line.splitn(4, ' ');
        let ts = parts.next().and_then(|s| s.parse().ok()).ok_or("bad timestamp")?;
        let thread = parts.next().and_then(|s| s.parse().ok()).ok_or("bad thread")?;
        let kind = parts.next().and_then(ProbeKind::parse).ok_or("bad event kind")?;
        let (name, rest) = parts.next().and_then(unquote_name).ok_or("bad quoted name")?;
        if !rest.is_empty() {
            return Err("trailing characters".into());
        }
        Ok(TraceEvent {
            ts_us: ts,
            thread,
            kind,
            name,
        })
    }
}

pub fn encode_trace(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.encode());
        out.push('\n');
    }
    out
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| TraceEvent::parse(l).map_err(|m| ferr(i + 1, format!("{m}: {l:?}"))))
        .collect()
}
