//! Scripted sessions.
//!
//! Grammar, one step per line (blank lines and `#` comments ignored):
//!
//! ```text
//! all: <MDWP command>
//! rank <N>: <MDWP command>
//! wait-hits <K>      # until K HIT events have arrived since attach
//! wait-exit          # until every agent has closed its connection
//! ```
//!
//! The transcript lists each rank's exchange in rank order, so it does not
//! depend on network timing. HIT events are listed after the wait that
//! observed them, sorted by rank.

use std::fmt;
use std::time::Duration;

use super::session::{Session, SessionEvent};
use super::ClientError;
use crate::mdwp::{self, Command};

pub const DEFAULT_WAIT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    All,
    Rank(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Send(Target, Command),
    WaitHits(usize),
    WaitExit,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("script line {line}: {message}")]
pub struct ScriptParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse_step(text: &str) -> Result<Option<Step>, String> {
    let text = text.trim();
    if text.is_empty() || text.starts_with('#') {
        return Ok(None);
    }
    if text == "wait-exit" {
        return Ok(Some(Step::WaitExit));
    }
    if let Some(k) = text.strip_prefix("wait-hits ") {
        let k = k.trim().parse().map_err(|_| format!("bad hit count {k:?}"))?;
        return Ok(Some(Step::WaitHits(k)));
    }
    let (target, cmd) = text
        .split_once(':')
        .ok_or_else(|| format!("expected `all: CMD`, `rank N: CMD`, `wait-hits K` or `wait-exit`, got {text:?}"))?;
    let target = match target.trim() {
        "all" => Target::All,
        t => match t.strip_prefix("rank ").map(|n| n.trim().parse()) {
            Some(Ok(n)) => Target::Rank(n),
            _ => return Err(format!("bad target {t:?}")),
        },
    };
    let cmd = Command::parse(cmd.trim()).map_err(|e| e.to_string())?;
    Ok(Some(Step::Send(target, cmd)))
}

pub fn parse_script(text: &str) -> Result<Vec<Step>, ScriptParseError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        match parse_step(l) {
            Ok(Some(s)) => out.push(s),
            Ok(None) => {}
            Err(message) => return Err(ScriptParseError { line: i + 1, message }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub lines: Vec<String>,
}

impl Transcript {
    fn push(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    pub fn hit_lines(&self) -> Vec<&str> {
        self.lines
            .iter()
            .filter(|l| l.contains(" < EVT HIT "))
            .map(String::as_str)
            .collect()
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct ScriptFailure {
    pub transcript: Transcript,
    pub error: ClientError,
}

#[derive(Debug, Clone, Copy)]
pub struct ScriptOptions {
    pub wait_timeout: Duration,
}

impl Default for ScriptOptions {
    fn default() -> Self {
        ScriptOptions {
            wait_timeout: DEFAULT_WAIT_TIMEOUT,
        }
    }
}

fn new_hits(events: &[SessionEvent], from: usize) -> Vec<SessionEvent> {
    let mut hits: Vec<SessionEvent> = events[from..]
        .iter()
        .filter(|e| e.kind == mdwp::EVT_HIT)
        .cloned()
        .collect();
    hits.sort_by(|a, b| (a.rank, &a.args).cmp(&(b.rank, &b.args)));
    hits
}

/// Runs `steps` in order. Command errors (ERR replies, dropped ranks) are
/// recorded and the script continues; a wait that times out stops it.
pub fn run_script(session: &Session, steps: &[Step], opts: ScriptOptions) -> Result<Transcript, ScriptFailure> {
    let mut t = Transcript::default();
    let mut seen_events = 0;
    for step in steps {
        match step {
            Step::Send(target, cmd) => {
                let results = match target {
                    Target::All => session.broadcast(cmd),
                    Target::Rank(r) => [(*r, session.send(*r, cmd))].into_iter().collect(),
                };
                for (rank, res) in results {
                    t.push(format!("rank {rank} > {cmd}"));
                    match res {
                        Ok(reply) => {
                            for l in reply.lines {
                                t.push(format!("rank {rank} < {l}"));
                            }
                        }
                        Err(e) => t.push(format!("rank {rank} ! {e}")),
                    }
                }
            }
            Step::WaitHits(k) => {
                if let Err(error) = session.wait_hits(*k, opts.wait_timeout) {
                    t.push(format!("wait-hits {k}: timeout"));
                    return Err(ScriptFailure { transcript: t, error });
                }
                let events = session.events();
                for e in new_hits(&events, seen_events) {
                    t.push(format!("rank {} < {}", e.rank, e.line()));
                }
                seen_events = events.len();
                t.push(format!("wait-hits {k}: ok"));
            }
            Step::WaitExit => {
                if let Err(error) = session.wait_exit(opts.wait_timeout) {
                    t.push("wait-exit: timeout");
                    return Err(ScriptFailure { transcript: t, error });
                }
                let events = session.events();
                for e in new_hits(&events, seen_events) {
                    t.push(format!("rank {} < {}", e.rank, e.line()));
                }
                seen_events = events.len();
                t.push("wait-exit: ok");
            }
        }
    }
    Ok(t)
}
