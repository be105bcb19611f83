//! Probe sites: the enter/exit instrumentation points shared by the debug
//! agent and the profiler.
//!
//! A [`Dispatch`] carries up to two listeners. At an enter site the debug
//! checkpoint runs first and the profiler second; at an exit site the order
//! is reversed. Each listener receives its own timestamp, so time spent
//! blocked in a checkpoint never lands inside the profiled function.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use crate::clock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProbeKind {
    Enter,
    Exit,
}

impl ProbeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Enter => "enter",
            ProbeKind::Exit => "exit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "enter" => Some(ProbeKind::Enter),
            "exit" => Some(ProbeKind::Exit),
            _ => None,
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Process-unique identity of an OS thread, assigned on first use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ThreadKey(pub u64);

impl fmt::Display for ThreadKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeSite<'a> {
    pub name: &'a str,
    pub kind: ProbeKind,
    pub thread: ThreadKey,
    /// Rank owning the calling thread, if the thread runs a rank body.
    pub rank: Option<usize>,
    pub timestamp_us: u64,
}

pub trait ProbeListener: Send + Sync {
    fn on_probe(&self, site: &ProbeSite<'_>);
}

#[derive(Clone, Default)]
pub struct Dispatch {
    debugger: Option<Arc<dyn ProbeListener>>,
    profiler: Option<Arc<dyn ProbeListener>>,
}

impl Dispatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_debugger(mut self, listener: Arc<dyn ProbeListener>) -> Self {
        self.debugger = Some(listener);
        self
    }

    pub fn with_profiler(mut self, listener: Arc<dyn ProbeListener>) -> Self {
        self.profiler = Some(listener);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.debugger.is_none() && self.profiler.is_none()
    }

    fn emit(&self, name: &str, kind: ProbeKind) {
        let thread = current_thread_key();
        let rank = current_rank();
        let fire = |l: &Arc<dyn ProbeListener>| {
            l.on_probe(&ProbeSite {
                name,
                kind,
                thread,
                rank,
                timestamp_us: clock::now_us(),
            })
        };
        match kind {
            ProbeKind::Enter => {
                self.debugger.iter().for_each(fire);
                self.profiler.iter().for_each(fire);
            }
            ProbeKind::Exit => {
                self.profiler.iter().for_each(fire);
                self.debugger.iter().for_each(fire);
            }
        }
    }
}

static GLOBAL: OnceLock<Arc<Dispatch>> = OnceLock::new();
static NEXT_THREAD: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static LOCAL: RefCell<Option<Arc<Dispatch>>> = const { RefCell::new(None) };
    static THREAD: Cell<Option<ThreadKey>> = const { Cell::new(None) };
    static RANK: Cell<Option<usize>> = const { Cell::new(None) };
}

/// Installs the process-wide dispatch. Returns false if one was already set.
pub fn set_global_dispatch(dispatch: Dispatch) -> bool {
    GLOBAL.set(Arc::new(dispatch)).is_ok()
}

/// Runs `f` with `dispatch` overriding the global one on this thread.
pub fn with_dispatch<R>(dispatch: Arc<Dispatch>, f: impl FnOnce() -> R) -> R {
    struct Restore(Option<Arc<Dispatch>>);
    impl Drop for Restore {
        fn drop(&mut self) {
            let prev = self.0.take();
            LOCAL.with(|l| *l.borrow_mut() = prev);
        }
    }
    let prev = LOCAL.with(|l| l.borrow_mut().replace(dispatch));
    let _restore = Restore(prev);
    f()
}

/// The dispatch in effect on this thread: the thread override, else the global one.
pub fn current_dispatch() -> Option<Arc<Dispatch>> {
    LOCAL.with(|l| l.borrow().clone()).or_else(|| GLOBAL.get().cloned())
}

pub fn current_thread_key() -> ThreadKey {
    THREAD.with(|t| match t.get() {
        Some(k) => k,
        None => {
            let k = ThreadKey(NEXT_THREAD.fetch_add(1, Ordering::Relaxed));
            t.set(Some(k));
            k
        }
    })
}

pub fn current_rank() -> Option<usize> {
    RANK.with(|r| r.get())
}

/// Associates the calling thread with `rank` for probe routing.
pub fn set_current_rank(rank: Option<usize>) {
    RANK.with(|r| r.set(rank));
}

/// Emits an exit event when dropped, including during unwinding.
pub struct ProbeGuard<'a> {
    name: &'a str,
    dispatch: Option<Arc<Dispatch>>,
}

impl<'a> ProbeGuard<'a> {
    pub fn enter(name: &'a str) -> Self {
        assert!(!name.is_empty(), "probe name must not be empty");
        let dispatch = current_dispatch().filter(|d| !d.is_empty());
        if let Some(d) = &dispatch {
            d.emit(name, ProbeKind::Enter);
        }
        ProbeGuard { name, dispatch }
    }
}

impl Drop for ProbeGuard<'_> {
    fn drop(&mut self) {
        if let Some(d) = &self.dispatch {
            d.emit(self.name, ProbeKind::Exit);
        }
    }
}

/// Runs `body` between an enter and an exit event for `name`.
pub fn probe_scope<R>(name: &str, body: impl FnOnce() -> R) -> R {
    let _guard = ProbeGuard::enter(name);
    body()
}

/// Listener that records every event it sees. Useful in tests.
#[derive(Default)]
pub struct Recorder {
    events: std::sync::Mutex<Vec<RecordedProbe>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedProbe {
    pub name: String,
    pub kind: ProbeKind,
    pub thread: ThreadKey,
    pub rank: Option<usize>,
    pub timestamp_us: u64,
}

impl Recorder {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn events(&self) -> Vec<RecordedProbe> {
        self.events.lock().unwrap().clone()
    }
}

impl ProbeListener for Recorder {
    fn on_probe(&self, site: &ProbeSite<'_>) {
        self.events.lock().unwrap().push(RecordedProbe {
            name: site.name.to_string(),
            kind: site.kind,
            thread: site.thread,
            rank: site.rank,
            timestamp_us: site.timestamp_us,
        });
    }
}

/// Checks that the per-thread enter/exit sequence is balanced and properly nested.
pub fn is_properly_nested(events: &[RecordedProbe]) -> bool {
    let mut stacks: std::collections::HashMap<ThreadKey, Vec<&str>> = Default::default();
    for e in events {
        let stack = stacks.entry(e.thread).or_default();
        match e.kind {
            ProbeKind::Enter => stack.push(&e.name),
            ProbeKind::Exit => {
                if stack.pop() != Some(e.name.as_str()) {
                    return false;
                }
            }
        }
    }
    stacks.values().all(|s| s.is_empty())
}
