//! Client-side view of each rank's debug state, rebuilt from OK and EVT
//! traffic only.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::mdwp::{self, Command, Line, RunState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ThreadView {
    pub id: u32,
    pub state: RunState,
    /// Probe where the thread last stopped, while it stays stopped.
    pub at: Option<String>,
    /// Innermost-first frames from the latest STACK reply.
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RankView {
    pub rank: usize,
    pub size: usize,
    pub address: String,
    pub port: u16,
    pub connected: bool,
    pub breakpoints: BTreeSet<String>,
    pub threads: BTreeMap<u32, ThreadView>,
}

/// A visible mirror change, reported to event subscribers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Change {
    Thread(u32, Option<RunState>),
    Breakpoint(String, bool),
}

impl RankView {
    pub fn new(rank: usize, address: &str, port: u16) -> Self {
        RankView {
            rank,
            size: 0,
            address: address.to_string(),
            port,
            connected: false,
            breakpoints: BTreeSet::new(),
            threads: BTreeMap::new(),
        }
    }

    pub fn state_of(&self, id: u32) -> Option<RunState> {
        self.threads.get(&id).map(|t| t.state)
    }

    fn set_state(&mut self, id: u32, state: RunState, at: Option<&str>, changes: &mut Vec<Change>) {
        let t = self.threads.entry(id).or_insert_with(|| ThreadView {
            id,
            state,
            at: None,
            frames: Vec::new(),
        });
        let changed = t.state != state || at.is_some_and(|a| t.at.as_deref() != Some(a));
        t.state = state;
        if state == RunState::Suspended {
            if let Some(a) = at {
                t.at = Some(a.to_string());
            }
        } else {
            t.at = None;
            t.frames.clear();
        }
        if changed {
            changes.push(Change::Thread(id, Some(state)));
        }
    }

    fn set_all(&mut self, f: impl Fn(RunState) -> RunState, changes: &mut Vec<Change>) {
        let ids: Vec<(u32, RunState)> = self.threads.values().map(|t| (t.id, f(t.state))).collect();
        for (id, s) in ids {
            self.set_state(id, s, None, changes);
        }
    }

    pub fn apply_event(&mut self, kind: &str, args: &[String]) -> Vec<Change> {
        let mut changes = Vec::new();
        let id = |i: usize| args.get(i).and_then(|a| a.parse::<u32>().ok());
        match kind {
            mdwp::EVT_HIT | mdwp::EVT_STEP => {
                if let (Some(name), Some(t)) = (args.first(), id(1)) {
                    self.set_state(t, RunState::Suspended, Some(name), &mut changes);
                }
            }
            mdwp::EVT_SUSPENDED => {
                if let Some(t) = id(0) {
                    self.set_state(t, RunState::Suspended, None, &mut changes);
                }
            }
            mdwp::EVT_THREAD_START => {
                let state = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(RunState::Running);
                if let Some(t) = id(0) {
                    self.set_state(t, state, None, &mut changes);
                }
            }
            mdwp::EVT_THREAD_END => {
                if let Some(t) = id(0) {
                    if self.threads.remove(&t).is_some() {
                        changes.push(Change::Thread(t, None));
                    }
                }
            }
            _ => {}
        }
        changes
    }

    /// Applies the effect of a command whose reply started with `OK`.
    pub fn apply_reply(&mut self, cmd: &Command, lines: &[String]) -> Vec<Change> {
        let mut changes = Vec::new();
        if lines.first().map(String::as_str).is_none_or(|l| !l.starts_with("OK")) {
            return changes;
        }
        match cmd {
            Command::Hello => {
                if let Some(Line::Ok(Some(p))) = lines.first().and_then(|l| Line::parse(l)) {
                    let f: Vec<&str> = p.split(' ').collect();
                    if let ["rank", _, "size", n] = f.as_slice() {
                        self.size = n.parse().unwrap_or(self.size);
                    }
                }
            }
            Command::Threads => {
                let mut seen = BTreeSet::new();
                for l in &lines[1..] {
                    if let Some(Line::Thread { id, state }) = Line::parse(l) {
                        seen.insert(id);
                        self.set_state(id, state, None, &mut changes);
                    }
                }
                let gone: Vec<u32> = self.threads.keys().filter(|k| !seen.contains(k)).copied().collect();
                for t in gone {
                    self.threads.remove(&t);
                    changes.push(Change::Thread(t, None));
                }
            }
            Command::Break(n) => {
                if self.breakpoints.insert(n.clone()) {
                    changes.push(Change::Breakpoint(n.clone(), true));
                }
            }
            Command::Clear(n) => {
                if self.breakpoints.remove(n) {
                    changes.push(Change::Breakpoint(n.clone(), false));
                }
            }
            Command::Suspend => self.set_all(
                |s| {
                    if s == RunState::Running {
                        RunState::SuspendRequested
                    } else {
                        s
                    }
                },
                &mut changes,
            ),
            Command::Resume(None) => self.set_all(|_| RunState::Running, &mut changes),
            Command::Resume(Some(t)) => self.set_state(*t, RunState::Running, None, &mut changes),
            Command::Step(t) => self.set_state(*t, RunState::Stepping, None, &mut changes),
            Command::Stack(t) => {
                if let Some(view) = self.threads.get_mut(t) {
                    view.frames = lines[1..]
                        .iter()
                        .filter_map(|l| match Line::parse(l) {
                            Some(Line::Frame(f)) => Some(f),
                            _ => None,
                        })
                        .collect();
                }
            }
            Command::Inspect(_) => {}
            Command::Detach => {
                for b in std::mem::take(&mut self.breakpoints) {
                    changes.push(Change::Breakpoint(b, false));
                }
                self.set_all(|_| RunState::Running, &mut changes);
            }
        }
        changes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn events_drive_states() {
        let mut v = RankView::new(0, "127.0.0.1", 8000);
        v.apply_event("THREAD_START", &s(&["0", "RUNNING"]));
        let c = v.apply_event("HIT", &s(&["compute", "0", "enter"]));
        assert_eq!(c, [Change::Thread(0, Some(RunState::Suspended))]);
        assert_eq!(v.threads[&0].at.as_deref(), Some("compute"));
        v.apply_reply(&Command::Stack(0), &s(&["OK", "FRAME compute", "FRAME main"]));
        assert_eq!(v.threads[&0].frames, ["compute", "main"]);
        v.apply_reply(&Command::Resume(None), &s(&["OK"]));
        assert_eq!(v.state_of(0), Some(RunState::Running));
        assert!(v.threads[&0].frames.is_empty());
        v.apply_event("THREAD_END", &s(&["0"]));
        assert!(v.threads.is_empty());
    }

    #[test]
    fn replies_mirror_agent_semantics() {
        let mut v = RankView::new(1, "h", 1);
        v.apply_reply(&Command::Hello, &s(&["OK rank 1 size 4"]));
        assert_eq!(v.size, 4);
        v.apply_reply(&Command::Threads, &s(&["OK", "THREAD 0 RUNNING", "THREAD 1 SUSPENDED"]));
        v.apply_reply(&Command::Suspend, &s(&["OK"]));
        assert_eq!(v.state_of(0), Some(RunState::SuspendRequested));
        assert_eq!(v.state_of(1), Some(RunState::Suspended));
        v.apply_reply(&Command::Step(1), &s(&["OK"]));
        assert_eq!(v.state_of(1), Some(RunState::Stepping));
        v.apply_reply(&Command::Break("f".into()), &s(&["OK"]));
        assert!(v.breakpoints.contains("f"));
        // Errors change nothing.
        v.apply_reply(&Command::Clear("f".into()), &s(&["ERR parse"]));
        assert!(v.breakpoints.contains("f"));
        v.apply_reply(&Command::Detach, &s(&["OK"]));
        assert!(v.breakpoints.is_empty());
        assert_eq!(v.state_of(0), Some(RunState::Running));
        v.apply_reply(&Command::Threads, &s(&["OK", "THREAD 1 RUNNING"]));
        assert_eq!(v.threads.keys().copied().collect::<Vec<_>>(), [1]);
    }
}
