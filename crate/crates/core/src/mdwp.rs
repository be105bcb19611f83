//! MDWP: the newline-delimited text protocol between debug client and agent.
//!
//! Client to agent:
//! `HELLO | THREADS | BREAK <name> | CLEAR <name> | SUSPEND | RESUME [<thread>]
//!  | STEP <thread> | STACK <thread> | INSPECT <name> | DETACH`
//!
//! Agent to client:
//! `OK[ <payload>] | ERR <code> | EVT <kind> <args...> | THREAD <id> <state> | FRAME <name>`

use std::fmt;
use std::str::FromStr;

pub const ERR_PARSE: &str = "parse";
pub const ERR_NOT_SUSPENDED: &str = "not-suspended";
pub const ERR_UNKNOWN_INSPECTABLE: &str = "unknown-inspectable";
pub const ERR_UNKNOWN_THREAD: &str = "unknown-thread";
pub const ERR_BUSY: &str = "busy";

pub const EVT_HIT: &str = "HIT";
pub const EVT_SUSPENDED: &str = "SUSPENDED";
pub const EVT_STEP: &str = "STEP";
pub const EVT_THREAD_START: &str = "THREAD_START";
pub const EVT_THREAD_END: &str = "THREAD_END";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunState {
    Running,
    SuspendRequested,
    Suspended,
    Stepping,
}

impl RunState {
    pub const ALL: [RunState; 4] = [
        RunState::Running,
        RunState::SuspendRequested,
        RunState::Suspended,
        RunState::Stepping,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunState::Running => "RUNNING",
            RunState::SuspendRequested => "SUSPEND_REQUESTED",
            RunState::Suspended => "SUSPENDED",
            RunState::Stepping => "STEPPING",
        }
    }
}

impl fmt::Display for RunState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunState {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        RunState::ALL.into_iter().find(|r| r.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Command {
    Hello,
    Threads,
    Break(String),
    Clear(String),
    Suspend,
    Resume(Option<u32>),
    Step(u32),
    Stack(u32),
    Inspect(String),
    Detach,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed MDWP command: {0:?}")]
pub struct ParseError(pub String);

fn valid_name(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c.is_control())
}

impl Command {
    pub fn parse(line: &str) -> Result<Self, ParseError> {
        let err = || ParseError(line.to_string());
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.contains(['\n', '\r']) {
            return Err(err());
        }
        let mut parts = line.split(' ');
        let verb = parts.next().ok_or_else(err)?;
        let args: Vec<&str> = parts.collect();
        let thread = |s: &str| s.parse::<u32>().map_err(|_| err());
        let name = |s: &str| if valid_name(s) { Ok(s.to_string()) } else { Err(err()) };
        let cmd = match (verb, args.as_slice()) {
            ("HELLO", []) => Command::Hello,
            ("THREADS", []) => Command::Threads,
            ("BREAK", [n]) => Command::Break(name(n)?),
            ("CLEAR", [n]) => Command::Clear(name(n)?),
            ("SUSPEND", []) => Command::Suspend,
            ("RESUME", []) => Command::Resume(None),
            ("RESUME", [t]) => Command::Resume(Some(thread(t)?)),
            ("STEP", [t]) => Command::Step(thread(t)?),
            ("STACK", [t]) => Command::Stack(thread(t)?),
            ("INSPECT", [n]) => Command::Inspect(name(n)?),
            ("DETACH", []) => Command::Detach,
            _ => return Err(err()),
        };
        Ok(cmd)
    }

    /// True for commands whose OK line is followed by THREAD or FRAME lines.
    pub fn is_multiline(&self) -> bool {
        matches!(self, Command::Threads | Command::Stack(_))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::Hello => f.write_str("HELLO"),
            Command::Threads => f.write_str("THREADS"),
            Command::Break(n) => write!(f, "BREAK {n}"),
            Command::Clear(n) => write!(f, "CLEAR {n}"),
            Command::Suspend => f.write_str("SUSPEND"),
            Command::Resume(None) => f.write_str("RESUME"),
            Command::Resume(Some(t)) => write!(f, "RESUME {t}"),
            Command::Step(t) => write!(f, "STEP {t}"),
            Command::Stack(t) => write!(f, "STACK {t}"),
            Command::Inspect(n) => write!(f, "INSPECT {n}"),
            Command::Detach => f.write_str("DETACH"),
        }
    }
}

/// One agent-to-client line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Line {
    Ok(Option<String>),
    Err(String),
    Evt { kind: String, args: Vec<String> },
    Thread { id: u32, state: RunState },
    Frame(String),
}

impl Line {
    pub fn parse(line: &str) -> Option<Self> {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line == "OK" {
            return Some(Line::Ok(None));
        }
        if let Some(p) = line.strip_prefix("OK ") {
            return Some(Line::Ok(Some(p.to_string())));
        }
        if let Some(code) = line.strip_prefix("ERR ") {
            return Some(Line::Err(code.to_string()));
        }
        if let Some(rest) = line.strip_prefix("EVT ") {
            let mut parts = rest.split(' ');
            let kind = parts.next()?.to_string();
            return Some(Line::Evt {
                kind,
                args: parts.map(str::to_string).collect(),
            });
        }
        if let Some(rest) = line.strip_prefix("THREAD ") {
            let (id, state) = rest.split_once(' ')?;
            return Some(Line::Thread {
                id: id.parse().ok()?,
                state: state.parse().ok()?,
            });
        }
        line.strip_prefix("FRAME ").map(|n| Line::Frame(n.to_string()))
    }

    pub fn is_continuation(line: &str) -> bool {
        line.starts_with("THREAD ") || line.starts_with("FRAME ")
    }
}

impl fmt::Display for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Line::Ok(None) => f.write_str("OK"),
            Line::Ok(Some(p)) => write!(f, "OK {p}"),
            Line::Err(c) => write!(f, "ERR {c}"),
            Line::Evt { kind, args } => {
                f.write_str("EVT ")?;
                f.write_str(kind)?;
                for a in args {
                    write!(f, " {a}")?;
                }
                Ok(())
            }
            Line::Thread { id, state } => write!(f, "THREAD {id} {state}"),
            Line::Frame(n) => write!(f, "FRAME {n}"),
        }
    }
}
