//! The agent's debug state machine, free of sockets and threads.
//!
//! Every response is a pure function of the current [`DebugState`] and the
//! command, which lets the protocol be tested exhaustively.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::harness::{ProbeKind, ThreadKey};
use crate::mdwp::{self, Command, Line, RunState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadEntry {
    pub key: ThreadKey,
    pub state: RunState,
    /// Current probe stack, outermost first.
    pub stack: Vec<String>,
}

/// Owner thread and value provider for an inspectable, as seen by the state machine.
pub type InspectLookup<'a> = &'a dyn Fn(&str) -> Option<(ThreadKey, Box<dyn FnOnce() -> String + 'a>)>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DebugState {
    pub rank: usize,
    pub size: usize,
    threads: BTreeMap<u32, ThreadEntry>,
    ids: HashMap<ThreadKey, u32>,
    next_id: u32,
    breakpoints: BTreeSet<String>,
    /// New threads begin in SUSPEND_REQUESTED until the first detach.
    suspend_new_threads: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckpointOutcome {
    /// EVT lines produced by this checkpoint, in order.
    pub events: Vec<String>,
    pub suspend: bool,
    pub thread: u32,
}

fn evt(kind: &str, args: &[&str]) -> String {
    Line::Evt {
        kind: kind.to_string(),
        args: args.iter().map(|a| a.to_string()).collect(),
    }
    .to_string()
}

fn ok() -> Vec<String> {
    vec!["OK".to_string()]
}

fn err(code: &str) -> Vec<String> {
    vec![format!("ERR {code}")]
}

fn sanitize(value: &str) -> String {
    value.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "\\r")
}

impl DebugState {
    pub fn new(rank: usize, size: usize, suspend_on_start: bool) -> Self {
        DebugState {
            rank,
            size,
            threads: BTreeMap::new(),
            ids: HashMap::new(),
            next_id: 0,
            breakpoints: BTreeSet::new(),
            suspend_new_threads: suspend_on_start,
        }
    }

    pub fn breakpoints(&self) -> &BTreeSet<String> {
        &self.breakpoints
    }

    pub fn threads(&self) -> &BTreeMap<u32, ThreadEntry> {
        &self.threads
    }

    pub fn thread_id(&self, key: ThreadKey) -> Option<u32> {
        self.ids.get(&key).copied()
    }

    pub fn state_of(&self, key: ThreadKey) -> Option<RunState> {
        self.thread_id(key).map(|id| self.threads[&id].state)
    }

    fn register(&mut self, key: ThreadKey, events: &mut Vec<String>) -> u32 {
        if let Some(id) = self.ids.get(&key) {
            return *id;
        }
        let id = self.next_id;
        self.next_id += 1;
        let state = if self.suspend_new_threads {
            RunState::SuspendRequested
        } else {
            RunState::Running
        };
        self.ids.insert(key, id);
        self.threads.insert(
            id,
            ThreadEntry {
                key,
                state,
                stack: Vec::new(),
            },
        );
        events.push(evt(mdwp::EVT_THREAD_START, &[&id.to_string(), state.as_str()]));
        id
    }

    /// Decides whether the thread stops at this probe site. Enter sites push
    /// onto the probe stack first; exit sites keep the frame until
    /// [`DebugState::finish_exit`] runs after any suspension.
    pub fn checkpoint(&mut self, key: ThreadKey, name: &str, kind: ProbeKind) -> CheckpointOutcome {
        let mut events = Vec::new();
        let id = self.register(key, &mut events);
        let bp_hit = kind == ProbeKind::Enter && self.breakpoints.contains(name);
        let entry = self.threads.get_mut(&id).unwrap();
        if kind == ProbeKind::Enter {
            entry.stack.push(name.to_string());
        }
        let idstr = id.to_string();
        let stop = if bp_hit {
            Some(evt(mdwp::EVT_HIT, &[name, &idstr, kind.as_str()]))
        } else {
            match entry.state {
                RunState::SuspendRequested => Some(evt(mdwp::EVT_SUSPENDED, &[&idstr])),
                RunState::Stepping => Some(evt(mdwp::EVT_STEP, &[name, &idstr, kind.as_str()])),
                RunState::Running | RunState::Suspended => None,
            }
        };
        let suspend = stop.is_some();
        if let Some(e) = stop {
            entry.state = RunState::Suspended;
            events.push(e);
        }
        CheckpointOutcome {
            events,
            suspend,
            thread: id,
        }
    }

    pub fn finish_exit(&mut self, key: ThreadKey, name: &str) {
        if let Some(id) = self.thread_id(key) {
            let stack = &mut self.threads.get_mut(&id).unwrap().stack;
            if stack.last().is_some_and(|top| top == name) {
                stack.pop();
            }
        }
    }

    /// Removes a finished thread; returns the THREAD_END event if it was known.
    pub fn thread_exit(&mut self, key: ThreadKey) -> Option<String> {
        let id = self.ids.remove(&key)?;
        self.threads.remove(&id);
        Some(evt(mdwp::EVT_THREAD_END, &[&id.to_string()]))
    }

    /// Resumes everything and forgets client-owned state.
    pub fn detach(&mut self) {
        self.breakpoints.clear();
        self.suspend_new_threads = false;
        for t in self.threads.values_mut() {
            t.state = RunState::Running;
        }
    }

    pub fn handle_line(&mut self, line: &str, inspect: InspectLookup<'_>) -> Vec<String> {
        match Command::parse(line) {
            Ok(cmd) => self.handle(&cmd, inspect),
            Err(_) => err(mdwp::ERR_PARSE),
        }
    }

    pub fn handle(&mut self, cmd: &Command, inspect: InspectLookup<'_>) -> Vec<String> {
        match cmd {
            Command::Hello => vec![format!("OK rank {} size {}", self.rank, self.size)],
            Command::Threads => {
                let mut out = ok();
                out.extend(self.threads.iter().map(|(id, t)| format!("THREAD {id} {}", t.state)));
                out
            }
            Command::Break(name) => {
                self.breakpoints.insert(name.clone());
                ok()
            }
            Command::Clear(name) => {
                self.breakpoints.remove(name);
                ok()
            }
            Command::Suspend => {
                for t in self.threads.values_mut() {
                    if t.state == RunState::Running {
                        t.state = RunState::SuspendRequested;
                    }
                }
                ok()
            }
            Command::Resume(None) => {
                self.suspend_new_threads = false;
                for t in self.threads.values_mut() {
                    t.state = RunState::Running;
                }
                ok()
            }
            Command::Resume(Some(id)) => match self.threads.get_mut(id) {
                None => err(mdwp::ERR_UNKNOWN_THREAD),
                Some(t) => {
                    t.state = RunState::Running;
                    ok()
                }
            },
            Command::Step(id) => match self.threads.get_mut(id) {
                None => err(mdwp::ERR_UNKNOWN_THREAD),
                Some(t) if t.state != RunState::Suspended => err(mdwp::ERR_NOT_SUSPENDED),
                Some(t) => {
                    t.state = RunState::Stepping;
                    ok()
                }
            },
            Command::Stack(id) => match self.threads.get(id) {
                None => err(mdwp::ERR_UNKNOWN_THREAD),
                Some(t) if t.state != RunState::Suspended => err(mdwp::ERR_NOT_SUSPENDED),
                Some(t) => {
                    let mut out = ok();
                    out.extend(t.stack.iter().rev().map(|f| format!("FRAME {f}")));
                    out
                }
            },
            Command::Inspect(name) => match inspect(name) {
                None => err(mdwp::ERR_UNKNOWN_INSPECTABLE),
                Some((owner, provider)) => {
                    if self.state_of(owner) == Some(RunState::Suspended) {
                        vec![format!("OK {}", sanitize(&provider()))]
                    } else {
                        err(mdwp::ERR_NOT_SUSPENDED)
                    }
                }
            },
            Command::Detach => {
                self.detach();
                ok()
            }
        }
    }
}
