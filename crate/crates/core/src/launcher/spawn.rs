use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::config::LaunchConfig;
use super::placement::Placement;
use super::LaunchError;
use crate::debug_agent::{ENV_DEBUG_PORT, ENV_DEBUG_SUSPEND};
use crate::harness::env::{ENV_CONF, ENV_MODE, ENV_RANK, ENV_SIZE};
use crate::harness::Mode;
use crate::profiler::{ENV_PROFILE, ENV_PROF_DIR, ENV_PROF_NODE, ENV_TRACE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Stdout,
    Stderr,
}

/// Receives every prefixed output line of every rank.
pub type OutputSink = Arc<dyn Fn(Stream, &str) + Send + Sync>;

pub fn stdio_sink() -> OutputSink {
    Arc::new(|stream, line| match stream {
        Stream::Stdout => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{line}");
            let _ = out.flush();
        }
        Stream::Stderr => {
            let _ = writeln!(std::io::stderr().lock(), "{line}");
        }
    })
}

pub type CapturedLines = Arc<Mutex<Vec<(Stream, String)>>>;

/// Collects lines in memory; returns the sink and the shared buffer.
pub fn capture_sink() -> (OutputSink, CapturedLines) {
    let buf = Arc::new(Mutex::new(Vec::new()));
    let b = buf.clone();
    (
        Arc::new(move |s, l: &str| b.lock().unwrap().push((s, l.to_string()))),
        buf,
    )
}

pub struct RankProcess {
    /// Ranks hosted by the process: one in cluster mode, all in multicore mode.
    pub ranks: Vec<usize>,
    pub label: String,
    child: Child,
}

pub struct ProcessSet {
    pub procs: Vec<RankProcess>,
}

impl ProcessSet {
    pub fn pids(&self) -> Vec<u32> {
        self.procs.iter().map(|p| p.child.id()).collect()
    }

    fn kill_all(&mut self) {
        for p in &mut self.procs {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RankOutcome {
    Exited(i32),
    Signaled(i32),
    /// Killed by the launcher after another rank failed.
    Terminated,
}

impl RankOutcome {
    pub fn from_status(status: ExitStatus) -> Self {
        if let Some(code) = status.code() {
            return RankOutcome::Exited(code);
        }
        #[cfg(unix)]
        {
            use std::os::unix::process::ExitStatusExt;
            if let Some(sig) = status.signal() {
                return RankOutcome::Signaled(sig);
            }
        }
        RankOutcome::Exited(-1)
    }

    pub fn success(&self) -> bool {
        *self == RankOutcome::Exited(0)
    }
}

impl fmt::Display for RankOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankOutcome::Exited(c) => write!(f, "exit code {c}"),
            RankOutcome::Signaled(s) => write!(f, "killed by signal {s}"),
            RankOutcome::Terminated => write!(f, "terminated after another rank failed"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExitReport {
    pub outcomes: BTreeMap<usize, RankOutcome>,
    /// Last stderr line of each failing rank.
    pub diagnostics: BTreeMap<usize, String>,
}

impl ExitReport {
    pub fn success(&self) -> bool {
        self.outcomes.values().all(RankOutcome::success)
    }

    pub fn exit_code(&self) -> i32 {
        if self.success() {
            return 0;
        }
        self.outcomes
            .values()
            .find_map(|o| match o {
                RankOutcome::Exited(c) if *c != 0 => Some(*c),
                _ => None,
            })
            .unwrap_or(1)
    }

    pub fn failed_ranks(&self) -> Vec<usize> {
        self.outcomes
            .iter()
            .filter(|(_, o)| !o.success())
            .map(|(r, _)| *r)
            .collect()
    }

    pub fn summary_lines(&self) -> Vec<String> {
        self.failed_ranks()
            .into_iter()
            .map(|r| match self.diagnostics.get(&r) {
                Some(d) => format!("rank {r} failed ({}): {d}", self.outcomes[&r]),
                None => format!("rank {r} failed ({})", self.outcomes[&r]),
            })
            .collect()
    }
}

fn base_env(config: &LaunchConfig) -> Vec<(String, String)> {
    let mut env = vec![
        (ENV_SIZE.to_string(), config.np.to_string()),
        (ENV_MODE.to_string(), config.mode.to_string()),
        (
            ENV_PROFILE.to_string(),
            if config.profile { "1" } else { "0" }.to_string(),
        ),
        (ENV_TRACE.to_string(), if config.trace { "1" } else { "0" }.to_string()),
        (ENV_PROF_DIR.to_string(), config.profile_dir.display().to_string()),
    ];
    if config.suspend_on_start {
        env.push((ENV_DEBUG_SUSPEND.to_string(), "1".into()));
    }
    env
}

/// Environment handed to each process, in order; the last entry for a key wins.
pub fn process_env(config: &LaunchConfig, placement: &Placement, rank: Option<usize>) -> Vec<(String, String)> {
    let mut env = base_env(config);
    if placement.entries.iter().any(|e| e.debug_port.is_some()) {
        env.push((ENV_CONF.to_string(), config.conf_path.display().to_string()));
    }
    match rank {
        Some(r) => {
            env.push((ENV_RANK.to_string(), r.to_string()));
            if config.debug() {
                if let Some(port) = placement.entries[r].debug_port {
                    env.push((ENV_DEBUG_PORT.to_string(), port.to_string()));
                }
            }
            if config.profile {
                env.push((ENV_PROF_NODE.to_string(), r.to_string()));
            }
        }
        None => {
            if config.debug() {
                if let Some(port) = placement.entries.first().and_then(|e| e.debug_port) {
                    env.push((ENV_DEBUG_PORT.to_string(), port.to_string()));
                }
            }
        }
    }
    env.extend(config.extra_env.iter().cloned());
    env
}

/// Command line for one rank: the program itself, or the remote template
/// followed by `env K=V ... program args`.
pub fn rank_command(config: &LaunchConfig, placement: &Placement, rank: Option<usize>) -> Command {
    let env = process_env(config, placement, rank);
    let host = rank
        .map(|r| placement.entries[r].address.as_str())
        .unwrap_or("127.0.0.1");
    match (&config.remote_exec, config.mode) {
        (Some(template), Mode::Cluster) => {
            let mut words = template.split_whitespace().map(|w| w.replace("{host}", host));
            let mut cmd = Command::new(words.next().unwrap_or_else(|| "sh".into()));
            cmd.args(words);
            cmd.arg("env");
            cmd.args(env.iter().map(|(k, v)| format!("{k}={v}")));
            cmd.args(&config.program);
            cmd
        }
        _ => {
            let mut cmd = Command::new(&config.program[0]);
            cmd.args(&config.program[1..]);
            cmd.envs(env);
            cmd
        }
    }
}

pub fn spawn(config: &LaunchConfig, placement: &Placement) -> Result<ProcessSet, LaunchError> {
    let plan: Vec<(Vec<usize>, String, Option<usize>)> = match config.mode {
        Mode::Multicore => vec![((0..config.np).collect(), format!("[ranks 0-{}] ", config.np - 1), None)],
        Mode::Cluster => (0..config.np)
            .map(|r| (vec![r], format!("[rank {r}] "), Some(r)))
            .collect(),
    };
    let mut set = ProcessSet { procs: Vec::new() };
    for (ranks, label, rank) in plan {
        let mut cmd = rank_command(config, placement, rank);
        cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
        match cmd.spawn() {
            Ok(child) => set.procs.push(RankProcess { ranks, label, child }),
            Err(e) => {
                set.kill_all();
                return Err(LaunchError::Spawn {
                    rank: ranks[0],
                    message: format!("{}: {e}", config.program[0]),
                });
            }
        }
    }
    Ok(set)
}

fn pump(reader: impl Read, stream: Stream, label: String, sink: OutputSink) -> Option<String> {
    let mut reader = BufReader::new(reader);
    let mut buf = Vec::new();
    let mut last = None;
    loop {
        buf.clear();
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) | Err(_) => break,
            Ok(_) => {
                let line = String::from_utf8_lossy(&buf);
                let line = line.trim_end_matches(['\n', '\r']);
                sink(stream, &format!("{label}{line}"));
                if !line.trim().is_empty() {
                    last = Some(line.to_string());
                }
            }
        }
    }
    last
}

/// How long the surviving ranks get to finish on their own once one rank
/// has failed. Peers of a dead rank usually block on it forever.
pub const ABORT_GRACE: Duration = Duration::from_secs(2);

fn wait_or_abort(child: &mut Child, abort: &Mutex<Option<Instant>>) -> RankOutcome {
    loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                let outcome = RankOutcome::from_status(status);
                if !outcome.success() {
                    abort
                        .lock()
                        .unwrap()
                        .get_or_insert_with(|| Instant::now() + ABORT_GRACE);
                }
                return outcome;
            }
            Ok(None) => {}
            Err(_) => return RankOutcome::Exited(-1),
        }
        if abort.lock().unwrap().is_some_and(|deadline| Instant::now() >= deadline) {
            let _ = child.kill();
            return match child.wait() {
                Ok(s) if s.success() => RankOutcome::Exited(0),
                Ok(s) if s.code().is_some() => RankOutcome::from_status(s),
                _ => RankOutcome::Terminated,
            };
        }
        std::thread::sleep(Duration::from_millis(10));
    }
}

/// Forwards output with rank prefixes and waits for every process. Once a
/// rank fails, the others are killed after [`ABORT_GRACE`].
pub fn monitor(procs: ProcessSet, sink: OutputSink) -> ExitReport {
    let abort = Arc::new(Mutex::new(None::<Instant>));
    let waiters: Vec<_> = procs
        .procs
        .into_iter()
        .map(|mut p| {
            let sink = sink.clone();
            let abort = abort.clone();
            std::thread::spawn(move || {
                let out = p.child.stdout.take().map(|s| {
                    let (label, sink) = (p.label.clone(), sink.clone());
                    std::thread::spawn(move || pump(s, Stream::Stdout, label, sink))
                });
                let err = p.child.stderr.take().map(|s| {
                    let (label, sink) = (p.label.clone(), sink.clone());
                    std::thread::spawn(move || pump(s, Stream::Stderr, label, sink))
                });
                let outcome = wait_or_abort(&mut p.child, &abort);
                if let Some(h) = out {
                    let _ = h.join();
                }
                let last_err = err.and_then(|h| h.join().ok().flatten());
                (p.ranks, outcome, last_err)
            })
        })
        .collect();

    let mut report = ExitReport::default();
    for w in waiters {
        let (ranks, outcome, last_err) = w.join().expect("monitor thread panicked");
        for r in ranks {
            if !outcome.success() {
                if let Some(d) = &last_err {
                    report.diagnostics.insert(r, d.clone());
                }
            }
            report.outcomes.insert(r, outcome.clone());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::launcher::placement::assign_ranks;

    fn sh(script: &str, np: usize, mode: Mode) -> LaunchConfig {
        let mut c = LaunchConfig::new(np, vec!["sh".into(), "-c".into(), script.into()]);
        c.mode = mode;
        c
    }

    fn env_of(cmd: &Command) -> BTreeMap<String, String> {
        cmd.get_envs()
            .filter_map(|(k, v)| Some((k.to_str()?.to_string(), v?.to_str()?.to_string())))
            .collect()
    }

    #[test]
    fn cluster_env_per_rank() {
        let mut c = sh("true", 2, Mode::Cluster);
        c.profile = true;
        c.debug_port_base = Some(8000);
        c.extra_env.push(("X".into(), "1".into()));
        let p = assign_ranks(&c.machines, 2).with_debug_ports(8000).unwrap();
        let env = env_of(&rank_command(&c, &p, Some(1)));
        assert_eq!(env["MPX_RANK"], "1");
        assert_eq!(env["MPX_SIZE"], "2");
        assert_eq!(env["MPX_MODE"], "cluster");
        assert_eq!(env["MPX_DEBUG_PORT"], "8002");
        assert_eq!(env["MPX_PROFILE"], "1");
        assert_eq!(env["MPX_PROF_NODE"], "1");
        assert_eq!(env["X"], "1");
    }

    #[test]
    fn multicore_env_has_no_rank_or_node() {
        let mut c = sh("true", 3, Mode::Multicore);
        c.profile = true;
        let p = assign_ranks(&c.machines, 3);
        let env = env_of(&rank_command(&c, &p, None));
        assert!(!env.contains_key("MPX_RANK"));
        assert!(!env.contains_key("MPX_PROF_NODE"));
        assert!(!env.contains_key("MPX_DEBUG_PORT"));
    }

    #[test]
    fn remote_template_prefixes_command() {
        let mut c = sh("true", 1, Mode::Cluster);
        c.machines = vec!["nodeA".into()];
        c.remote_exec = Some("ssh -o BatchMode=yes {host}".into());
        let p = assign_ranks(&c.machines, 1);
        let cmd = rank_command(&c, &p, Some(0));
        assert_eq!(cmd.get_program(), "ssh");
        let args: Vec<_> = cmd.get_args().map(|a| a.to_str().unwrap().to_string()).collect();
        assert_eq!(&args[..3], ["-o", "BatchMode=yes", "nodeA"]);
        assert_eq!(args[3], "env");
        assert!(args.contains(&"MPX_RANK=0".to_string()));
        assert_eq!(&args[args.len() - 3..], ["sh", "-c", "true"]);
    }

    #[test]
    fn prefixes_and_exit_codes() {
        let c = sh(
            "echo hi; echo second; [ \"$MPX_RANK\" = 1 ] && exit 3; exit 0",
            2,
            Mode::Cluster,
        );
        let p = assign_ranks(&c.machines, 2);
        let (sink, lines) = capture_sink();
        let report = monitor(spawn(&c, &p).unwrap(), sink);
        assert_eq!(report.outcomes[&0], RankOutcome::Exited(0));
        assert_eq!(report.outcomes[&1], RankOutcome::Exited(3));
        assert!(!report.success());
        assert_eq!(report.exit_code(), 3);
        let lines = lines.lock().unwrap();
        for r in 0..2 {
            let mine: Vec<_> = lines
                .iter()
                .filter(|(_, l)| l.starts_with(&format!("[rank {r}] ")))
                .map(|(_, l)| l.clone())
                .collect();
            assert_eq!(mine, [format!("[rank {r}] hi"), format!("[rank {r}] second")]);
        }
    }

    #[test]
    fn signal_is_distinct_from_exit_code() {
        let c = sh("kill -9 $$", 1, Mode::Cluster);
        let p = assign_ranks(&c.machines, 1);
        let report = monitor(spawn(&c, &p).unwrap(), capture_sink().0);
        assert_eq!(report.outcomes[&0], RankOutcome::Signaled(9));
        assert_eq!(report.exit_code(), 1);
    }

    #[test]
    fn failure_terminates_survivors() {
        let c = sh("[ \"$MPX_RANK\" = 0 ] && exit 4; exec sleep 60", 3, Mode::Cluster);
        let p = assign_ranks(&c.machines, 3);
        let started = Instant::now();
        let report = monitor(spawn(&c, &p).unwrap(), capture_sink().0);
        assert!(started.elapsed() < Duration::from_secs(20));
        assert_eq!(report.outcomes[&0], RankOutcome::Exited(4));
        assert_eq!(report.outcomes[&1], RankOutcome::Terminated);
        assert_eq!(report.outcomes[&2], RankOutcome::Terminated);
        assert_eq!(report.exit_code(), 4);
    }

    #[test]
    fn multicore_is_one_process() {
        let c = sh("echo $MPX_SIZE", 2, Mode::Multicore);
        let p = assign_ranks(&c.machines, 2);
        let set = spawn(&c, &p).unwrap();
        assert_eq!(set.pids().len(), 1);
        let (sink, lines) = capture_sink();
        let report = monitor(set, sink);
        assert!(report.success());
        assert_eq!(report.outcomes.len(), 2);
        assert_eq!(lines.lock().unwrap()[0].1, "[ranks 0-1] 2");
    }

    #[test]
    fn spawn_failure_names_rank() {
        let mut c = LaunchConfig::new(1, vec!["/nonexistent/mpx-program".into()]);
        c.mode = Mode::Cluster;
        let p = assign_ranks(&c.machines, 1);
        match spawn(&c, &p) {
            Err(LaunchError::Spawn { rank, .. }) => assert_eq!(rank, 0),
            other => panic!("unexpected: {:?}", other.map(|_| ())),
        }
    }
}
