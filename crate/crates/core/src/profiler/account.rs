//! Per-thread timer stack with inclusive/exclusive accounting in integer
//! microsecond ticks.

use std::collections::HashMap;

use super::format::{FunctionStats, ProfileData, TraceEvent};
use super::ROOT_NAME;
use crate::harness::ProbeKind;

#[derive(Debug, Clone)]
struct Frame {
    /// Index into `funcs`; unused for the root frame.
    func: usize,
    start: u64,
    child_time: u64,
    subrs: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Totals {
    calls: u64,
    subrs: u64,
    excl: u64,
    incl: u64,
}

#[derive(Debug, Clone)]
struct Func {
    name: String,
    totals: Totals,
    /// Open frames; inclusive time is credited when this drops to zero.
    depth: u32,
}

#[derive(Debug, Clone, Default)]
pub struct ThreadAccount {
    stack: Vec<Frame>,
    // Names are interned so steady-state events do not allocate.
    ids: HashMap<String, usize>,
    funcs: Vec<Func>,
    root: Option<Frame>,
    last_ts: u64,
    errors: Vec<String>,
}

impl ThreadAccount {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn errors(&self) -> &[String] {
        &self.errors
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.funcs.len();
        self.funcs.push(Func {
            name: name.to_string(),
            totals: Totals::default(),
            depth: 0,
        });
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn on_event(&mut self, name: &str, kind: ProbeKind, ts: u64) {
        let ts = ts.max(self.last_ts);
        self.last_ts = ts;
        if self.root.is_none() {
            self.root = Some(Frame {
                func: usize::MAX,
                start: ts,
                child_time: 0,
                subrs: 0,
            });
        }
        match kind {
            ProbeKind::Enter => {
                let func = self.intern(name);
                self.funcs[func].depth += 1;
                self.stack.push(Frame {
                    func,
                    start: ts,
                    child_time: 0,
                    subrs: 0,
                });
            }
            ProbeKind::Exit => match self.stack.last() {
                Some(top) if self.funcs[top.func].name == name => self.pop(ts),
                Some(top) => {
                    let open = &self.funcs[top.func].name;
                    let msg = format!("exit of {name:?} at {ts} while {open:?} is innermost");
                    self.errors.push(msg)
                }
                None => self.errors.push(format!("exit of {name:?} at {ts} with no open frame")),
            },
        }
    }

    fn pop(&mut self, ts: u64) {
        let frame = self.stack.pop().expect("pop on empty stack");
        let incl = ts - frame.start;
        let excl = incl - frame.child_time;
        let parent = self.stack.last_mut().or(self.root.as_mut()).expect("root exists");
        parent.child_time += incl;
        parent.subrs += 1;
        let f = &mut self.funcs[frame.func];
        f.depth -= 1;
        f.totals.calls += 1;
        f.totals.subrs += frame.subrs;
        f.totals.excl += excl;
        if f.depth == 0 {
            f.totals.incl += incl;
        }
    }

    /// Statistics as of the last event. Frames still open are closed at the
    /// last timestamp in a scratch copy; `self` is unchanged.
    pub fn snapshot(&self) -> Vec<FunctionStats> {
        let mut scratch = self.clone();
        while !scratch.stack.is_empty() {
            scratch.pop(scratch.last_ts);
        }
        let mut out: Vec<FunctionStats> = scratch
            .funcs
            .iter()
            .filter(|f| f.totals.calls > 0)
            .map(|Func { name, totals: t, .. }| FunctionStats {
                name: name.clone(),
                calls: t.calls as i64,
                subrs: t.subrs as i64,
                excl_us: t.excl as i64,
                incl_us: t.incl as i64,
            })
            .collect();
        if let Some(root) = &scratch.root {
            let incl = scratch.last_ts - root.start;
            out.push(FunctionStats {
                name: ROOT_NAME.to_string(),
                calls: 1,
                subrs: root.subrs as i64,
                excl_us: (incl - root.child_time) as i64,
                incl_us: incl as i64,
            });
        }
        out.sort_by(super::format::by_exclusive_desc);
        out
    }

    pub fn profile(&self, comments: Vec<String>) -> ProfileData {
        let mut comments = comments;
        comments.extend(self.errors.iter().map(|e| format!("invalid: {e}")));
        ProfileData {
            functions: self.snapshot(),
            comments,
        }
    }

    /// Replays a trace through a fresh account.
    pub fn from_trace(events: &[TraceEvent]) -> Self {
        let mut acc = ThreadAccount::new();
        for e in events {
            acc.on_event(&e.name, e.kind, e.ts_us);
        }
        acc
    }
}
