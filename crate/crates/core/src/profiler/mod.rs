//! Function-level profiler.
//!
//! Consumes probe events, keeps one [`ThreadAccount`] per thread, and writes
//! `profile.<node>.0.<thread>` (plus `trace.<node>.0.<thread>` when tracing)
//! into the profile directory. Thread indices are dense and assigned in the
//! order threads first reach a probe.

pub mod account;
pub mod format;

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub use account::ThreadAccount;
pub use format::{FunctionStats, ProfileData, ProfileIdentity, TraceEvent};

use crate::harness::probe::{ProbeListener, ProbeSite};
use crate::harness::{ProbeKind, ThreadKey};

pub const ENV_PROFILE: &str = "MPX_PROFILE";
pub const ENV_TRACE: &str = "MPX_TRACE";
pub const ENV_PROF_NODE: &str = "MPX_PROF_NODE";
pub const ENV_PROF_DIR: &str = "MPX_PROF_DIR";

/// Synthetic top-level timer wrapping every thread.
pub const ROOT_NAME: &str = ".application";

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("profile config error: {0}")]
    Config(String),
    #[error("profile directory {} is not writable: {source}", path.display())]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfilerConfig {
    pub node: u32,
    pub dir: PathBuf,
    pub trace: bool,
}

impl ProfilerConfig {
    /// Reads `MPX_PROFILE`, `MPX_TRACE`, `MPX_PROF_NODE` and `MPX_PROF_DIR`.
    /// Returns `None` when profiling is off.
    pub fn from_vars<I, K, V>(vars: I) -> Result<Option<Self>, ProfileError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let vars: HashMap<String, String> = vars.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        let flag = |k: &str| vars.get(k).is_some_and(|v| matches!(v.trim(), "1" | "true" | "yes"));
        if !flag(ENV_PROFILE) {
            return Ok(None);
        }
        let node = match vars.get(ENV_PROF_NODE).map(|v| v.trim()).filter(|v| !v.is_empty()) {
            Some(v) => v
                .parse()
                .map_err(|_| ProfileError::Config(format!("{ENV_PROF_NODE}: invalid node id {v:?}")))?,
            None => 0,
        };
        let dir = vars
            .get(ENV_PROF_DIR)
            .filter(|v| !v.trim().is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Some(ProfilerConfig {
            node,
            dir,
            trace: flag(ENV_TRACE),
        }))
    }
}

struct ThreadSlot {
    index: u32,
    key: ThreadKey,
    label: String,
    account: ThreadAccount,
    trace: Vec<TraceEvent>,
}

struct Shared {
    id: u64,
    config: ProfilerConfig,
    slots: Mutex<Vec<Arc<Mutex<ThreadSlot>>>>,
}

static NEXT_PROFILER: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static CACHE: RefCell<Vec<(u64, Arc<Mutex<ThreadSlot>>)>> = const { RefCell::new(Vec::new()) };
}

/// Profiler handle. A disabled handle ignores events and writes nothing.
#[derive(Clone)]
pub struct Profiler {
    shared: Option<Arc<Shared>>,
}

/// Enables profiling from the environment. Fails fast if the profile
/// directory cannot be written.
pub fn enable_from_env() -> Result<Profiler, ProfileError> {
    enable(std::env::vars())
}

pub fn enable<I, K, V>(vars: I) -> Result<Profiler, ProfileError>
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: Into<String>,
{
    match ProfilerConfig::from_vars(vars)? {
        Some(cfg) => Profiler::new(cfg),
        None => Ok(Profiler::disabled()),
    }
}

fn check_writable(dir: &Path) -> Result<(), ProfileError> {
    let unwritable = |source| ProfileError::Unwritable {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(unwritable)?;
    let probe = dir.join(format!(".mpx-write-probe-{}", std::process::id()));
    std::fs::write(&probe, b"").map_err(unwritable)?;
    let _ = std::fs::remove_file(probe);
    Ok(())
}

impl Profiler {
    pub fn new(config: ProfilerConfig) -> Result<Self, ProfileError> {
        check_writable(&config.dir)?;
        Ok(Profiler {
            shared: Some(Arc::new(Shared {
                id: NEXT_PROFILER.fetch_add(1, Ordering::Relaxed),
                config,
                slots: Mutex::new(Vec::new()),
            })),
        })
    }

    pub fn disabled() -> Self {
        Profiler { shared: None }
    }

    pub fn is_enabled(&self) -> bool {
        self.shared.is_some()
    }

    pub fn config(&self) -> Option<&ProfilerConfig> {
        self.shared.as_ref().map(|s| &s.config)
    }

    pub fn node(&self) -> Option<u32> {
        self.config().map(|c| c.node)
    }

    fn slot(shared: &Arc<Shared>, key: ThreadKey) -> Arc<Mutex<ThreadSlot>> {
        CACHE.with(|c| {
            let mut cache = c.borrow_mut();
            if let Some((_, slot)) = cache.iter().find(|(id, _)| *id == shared.id) {
                return slot.clone();
            }
            let mut slots = shared.slots.lock().unwrap();
            let thread = std::thread::current();
            let slot = Arc::new(Mutex::new(ThreadSlot {
                index: slots.len() as u32,
                key,
                label: thread.name().unwrap_or("unnamed").replace(char::is_whitespace, "_"),
                account: ThreadAccount::new(),
                trace: Vec::new(),
            }));
            slots.push(slot.clone());
            cache.push((shared.id, slot.clone()));
            slot
        })
    }

    /// Records one probe event on the calling thread.
    pub fn on_event(&self, name: &str, kind: ProbeKind, thread: ThreadKey, ts_us: u64) {
        let Some(shared) = &self.shared else { return };
        let slot = Self::slot(shared, thread);
        let mut slot = slot.lock().unwrap();
        slot.account.on_event(name, kind, ts_us);
        if shared.config.trace {
            let index = slot.index;
            slot.trace.push(TraceEvent {
                ts_us,
                thread: index,
                kind,
                name: name.to_string(),
            });
        }
    }

    /// Per-thread profiles as they would be written now.
    pub fn profiles(&self) -> Vec<(ProfileIdentity, ProfileData)> {
        let Some(shared) = &self.shared else {
            return Vec::new();
        };
        let slots = shared.slots.lock().unwrap().clone();
        slots
            .iter()
            .map(|s| {
                let s = s.lock().unwrap();
                let id = ProfileIdentity::new(shared.config.node, s.index);
                let comment = format!("thread {} native {} {}", s.index, s.key, s.label);
                (id, s.account.profile(vec![comment]))
            })
            .collect()
    }

    pub fn traces(&self) -> Vec<(ProfileIdentity, Vec<TraceEvent>)> {
        let Some(shared) = &self.shared else {
            return Vec::new();
        };
        let slots = shared.slots.lock().unwrap().clone();
        slots
            .iter()
            .map(|s| {
                let s = s.lock().unwrap();
                (ProfileIdentity::new(shared.config.node, s.index), s.trace.clone())
            })
            .collect()
    }

    /// Writes every thread's profile (and trace) file. Rewrites identical
    /// content when called again with no new events.
    pub fn flush(&self) -> Result<Vec<PathBuf>, ProfileError> {
        let Some(shared) = &self.shared else {
            return Ok(Vec::new());
        };
        let dir = &shared.config.dir;
        let mut written = Vec::new();
        for (id, data) in self.profiles() {
            let path = dir.join(id.profile_file_name());
            write_atomic(&path, data.encode().as_bytes())?;
            written.push(path);
        }
        if shared.config.trace {
            for (id, events) in self.traces() {
                let path = dir.join(id.trace_file_name());
                write_atomic(&path, format::encode_trace(&events).as_bytes())?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

/// Writes through a temporary file so a failed write leaves nothing behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ProfileError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let res = std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path));
    res.map_err(|source| {
        let _ = std::fs::remove_file(&tmp);
        ProfileError::Io {
            path: path.to_path_buf(),
            source,
        }
    })
}

impl ProbeListener for Profiler {
    fn on_probe(&self, site: &ProbeSite<'_>) {
        self.on_event(site.name, site.kind, site.thread, site.timestamp_us);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::probe::{probe_scope, with_dispatch, Dispatch};

    fn vars(dir: &Path, extra: &[(&str, &str)]) -> Vec<(String, String)> {
        let mut v = vec![
            (ENV_PROFILE.to_string(), "1".to_string()),
            (ENV_PROF_DIR.to_string(), dir.display().to_string()),
        ];
        v.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
        v
    }

    #[test]
    fn node_override_and_default() {
        let dir = tempfile::tempdir().unwrap();
        let p = enable(vars(dir.path(), &[(ENV_PROF_NODE, "3")])).unwrap();
        assert_eq!(p.node(), Some(3));
        let p = enable(vars(dir.path(), &[])).unwrap();
        assert_eq!(p.node(), Some(0));
    }

    #[test]
    fn disabled_when_off() {
        let p = enable([(ENV_PROFILE, "0")]).unwrap();
        assert!(!p.is_enabled());
        p.on_event("f", ProbeKind::Enter, ThreadKey(0), 0);
        assert!(p.flush().unwrap().is_empty());
    }

    #[test]
    fn unwritable_dir_fails_at_enable() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        std::fs::write(&file, "x").unwrap();
        let err = enable(vars(&file, &[])).err().unwrap();
        assert!(matches!(err, ProfileError::Unwritable { .. }));
    }

    #[test]
    fn flush_names_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let p = enable(vars(dir.path(), &[(ENV_PROF_NODE, "2"), (ENV_TRACE, "1")])).unwrap();
        let d = Arc::new(Dispatch::new().with_profiler(Arc::new(p.clone())));
        with_dispatch(d, || probe_scope("main", || probe_scope("work", || ())));
        let files = p.flush().unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|f| f.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["profile.2.0.0", "trace.2.0.0"]);
        let first = std::fs::read(&files[0]).unwrap();
        p.flush().unwrap();
        assert_eq!(std::fs::read(&files[0]).unwrap(), first);
        let text = String::from_utf8(first).unwrap();
        assert!(text.starts_with("3 functions\n"), "{text}");
    }

    #[test]
    fn threads_get_dense_indices() {
        let dir = tempfile::tempdir().unwrap();
        let p = enable(vars(dir.path(), &[])).unwrap();
        let handles: Vec<_> = (0..3)
            .map(|_| {
                let p = p.clone();
                std::thread::spawn(move || {
                    let key = crate::harness::probe::current_thread_key();
                    p.on_event("f", ProbeKind::Enter, key, 1);
                    p.on_event("f", ProbeKind::Exit, key, 2);
                })
            })
            .collect();
        handles.into_iter().for_each(|h| h.join().unwrap());
        let mut names: Vec<_> = p
            .flush()
            .unwrap()
            .iter()
            .map(|f| f.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        names.sort();
        assert_eq!(names, ["profile.0.0.0", "profile.0.0.1", "profile.0.0.2"]);
    }

    #[test]
    fn empty_profile_file() {
        let acc = ThreadAccount::new();
        let text = acc.profile(vec![]).encode();
        assert_eq!(text, "0 functions\n0 aggregates\n");
    }

    #[test]
    fn io_failure_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = enable(vars(dir.path(), &[])).unwrap();
        p.on_event("f", ProbeKind::Enter, ThreadKey(1), 0);
        // Occupy the target name with a directory so the rename fails.
        std::fs::create_dir(dir.path().join("profile.0.0.0")).unwrap();
        std::fs::write(dir.path().join("profile.0.0.0").join("x"), "").unwrap();
        let err = p.flush().unwrap_err();
        assert!(err.to_string().contains("profile.0.0.0"), "{err}");
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.contains("tmp"))
            .collect();
        assert!(leftovers.is_empty(), "{leftovers:?}");
    }
}
