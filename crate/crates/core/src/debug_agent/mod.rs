//! In-process debug agent.
//!
//! Threads stop only at probe sites: the harness calls [`Agent::on_probe`]
//! at every enter and exit, and a thread that must stop blocks there until
//! the attached client resumes or steps it. One client may be attached at a
//! time; a second connection receives `ERR busy`. Disconnecting without
//! `DETACH` is treated as `DETACH`.

pub mod state;

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{IpAddr, Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use crate::harness::inspect::InspectRegistry;
use crate::harness::probe::{ProbeListener, ProbeSite};
use crate::harness::{ProbeKind, ThreadKey};
use crate::mdwp::{self, Command, RunState};

pub use state::DebugState;

pub const ENV_DEBUG_PORT: &str = "MPX_DEBUG_PORT";
pub const ENV_DEBUG_SUSPEND: &str = "MPX_DEBUG_SUSPEND";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentOptions {
    pub port: u16,
    pub suspend_on_start: bool,
    /// Listen for the client. Connecting out is not supported.
    pub server: bool,
    pub bind: IpAddr,
}

impl AgentOptions {
    pub fn listen(port: u16) -> Self {
        AgentOptions {
            port,
            suspend_on_start: false,
            server: true,
            bind: IpAddr::V4(Ipv4Addr::UNSPECIFIED),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("debug agent for rank {rank} cannot listen on port {port}: address already in use")]
    AddressInUse { rank: usize, port: u16 },
    #[error("debug agent for rank {rank} cannot listen on port {port}: {source}")]
    Bind {
        rank: usize,
        port: u16,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid agent options: {0}")]
    Options(String),
}

struct Inner {
    machine: DebugState,
    client: Option<TcpStream>,
    pending: VecDeque<String>,
}

impl Inner {
    /// Sends EVT lines now, or queues them until a client attaches.
    fn emit(&mut self, lines: &[String]) {
        if lines.is_empty() {
            return;
        }
        if let Some(c) = &mut self.client {
            let mut buf = String::new();
            for l in lines {
                buf.push_str(l);
                buf.push('\n');
            }
            if c.write_all(buf.as_bytes()).is_ok() {
                return;
            }
            self.client = None;
        }
        self.pending.extend(lines.iter().cloned());
    }
}

struct Shared {
    inner: Mutex<Inner>,
    cv: Condvar,
    inspect: Arc<InspectRegistry>,
}

/// A listening agent for one rank.
#[derive(Clone)]
pub struct Agent {
    shared: Arc<Shared>,
    local_addr: SocketAddr,
}

/// Binds the agent's port and starts serving clients on a background thread.
pub fn start_agent(
    opts: &AgentOptions,
    rank: usize,
    size: usize,
    inspect: Arc<InspectRegistry>,
) -> Result<Agent, AgentError> {
    if !opts.server {
        return Err(AgentError::Options("only server=y is supported".into()));
    }
    if opts.port < 1024 {
        return Err(AgentError::Options(format!("port {} below 1024", opts.port)));
    }
    let listener = TcpListener::bind((opts.bind, opts.port)).map_err(|e| match e.kind() {
        ErrorKind::AddrInUse => AgentError::AddressInUse { rank, port: opts.port },
        _ => AgentError::Bind {
            rank,
            port: opts.port,
            source: e,
        },
    })?;
    let local_addr = listener.local_addr().map_err(|e| AgentError::Bind {
        rank,
        port: opts.port,
        source: e,
    })?;
    let shared = Arc::new(Shared {
        inner: Mutex::new(Inner {
            machine: DebugState::new(rank, size, opts.suspend_on_start),
            client: None,
            pending: VecDeque::new(),
        }),
        cv: Condvar::new(),
        inspect,
    });
    let s = shared.clone();
    std::thread::Builder::new()
        .name(format!("mpx-agent-{rank}"))
        .spawn(move || accept_loop(listener, s))
        .map_err(|e| AgentError::Bind {
            rank,
            port: opts.port,
            source: e,
        })?;
    Ok(Agent { shared, local_addr })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for conn in listener.incoming() {
        let Ok(mut stream) = conn else { continue };
        let _ = stream.set_nodelay(true);
        let mut inner = shared.inner.lock().unwrap();
        if inner.client.is_some() {
            let _ = writeln!(stream, "ERR {}", mdwp::ERR_BUSY);
            let _ = stream.shutdown(Shutdown::Both);
            continue;
        }
        let Ok(writer) = stream.try_clone() else { continue };
        inner.client = Some(writer);
        let queued: Vec<String> = inner.pending.drain(..).collect();
        inner.emit(&queued);
        drop(inner);
        let s = shared.clone();
        let _ = std::thread::Builder::new()
            .name("mpx-agent-session".into())
            .spawn(move || serve_client(stream, &s));
    }
}

fn serve_client(stream: TcpStream, shared: &Shared) {
    let reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    for line in reader.lines() {
        let Ok(line) = line else { break };
        let detach = matches!(Command::parse(&line), Ok(Command::Detach));
        let mut inner = shared.inner.lock().unwrap();
        let response = handle_with_registry(&mut inner, &shared.inspect, &line);
        inner.emit(&response);
        shared.cv.notify_all();
        if detach {
            inner.client = None;
            drop(inner);
            let _ = stream.shutdown(Shutdown::Both);
            return;
        }
    }
    let mut inner = shared.inner.lock().unwrap();
    inner.machine.detach();
    inner.client = None;
    shared.cv.notify_all();
}

fn handle_with_registry(inner: &mut MutexGuard<'_, Inner>, registry: &InspectRegistry, line: &str) -> Vec<String> {
    let lookup = |name: &str| -> Option<(ThreadKey, Box<dyn FnOnce() -> String>)> {
        let entry = registry.lookup(name)?;
        let provider = entry.provider.clone();
        Some((entry.owner, Box::new(move || provider())))
    };
    inner.machine.handle_line(line, &lookup)
}

impl Agent {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn port(&self) -> u16 {
        self.local_addr.port()
    }

    /// Checkpoint for one probe event on the calling thread. Blocks while the
    /// thread is suspended.
    pub fn checkpoint(&self, thread: ThreadKey, name: &str, kind: ProbeKind) {
        let mut inner = self.shared.inner.lock().unwrap();
        let out = inner.machine.checkpoint(thread, name, kind);
        inner.emit(&out.events);
        if out.suspend {
            while inner.machine.state_of(thread) == Some(RunState::Suspended) {
                inner = self.shared.cv.wait(inner).unwrap();
            }
        }
        if kind == ProbeKind::Exit {
            inner.machine.finish_exit(thread, name);
        }
    }

    pub fn thread_exit(&self, thread: ThreadKey) {
        let mut inner = self.shared.inner.lock().unwrap();
        if let Some(e) = inner.machine.thread_exit(thread) {
            inner.emit(&[e]);
        }
    }

    /// Snapshot of the state machine, for tests and diagnostics.
    pub fn snapshot(&self) -> DebugState {
        self.shared.inner.lock().unwrap().machine.clone()
    }
}

impl ProbeListener for Agent {
    fn on_probe(&self, site: &ProbeSite<'_>) {
        self.checkpoint(site.thread, site.name, site.kind);
    }
}

/// Routes probe events to the agent of the rank that owns the calling thread.
#[derive(Default)]
pub struct AgentHub {
    agents: Vec<Option<Agent>>,
}

impl AgentHub {
    pub fn new(size: usize) -> Self {
        AgentHub {
            agents: vec![None; size],
        }
    }

    pub fn insert(&mut self, rank: usize, agent: Agent) {
        if rank >= self.agents.len() {
            self.agents.resize(rank + 1, None);
        }
        self.agents[rank] = Some(agent);
    }

    pub fn get(&self, rank: usize) -> Option<&Agent> {
        self.agents.get(rank).and_then(Option::as_ref)
    }
}

impl ProbeListener for AgentHub {
    fn on_probe(&self, site: &ProbeSite<'_>) {
        if let Some(agent) = site.rank.and_then(|r| self.get(r)) {
            agent.on_probe(site);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader};
    use std::time::Duration;

    fn local_opts() -> AgentOptions {
        AgentOptions {
            port: 0,
            suspend_on_start: false,
            server: true,
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
        }
    }

    fn start(opts: &AgentOptions) -> Agent {
        // Port 0 is refused by validation; bind an ephemeral port directly.
        let port = TcpListener::bind(("127.0.0.1", 0))
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let opts = AgentOptions { port, ..opts.clone() };
        start_agent(&opts, 0, 1, InspectRegistry::new()).unwrap()
    }

    struct Client {
        reader: BufReader<TcpStream>,
        writer: TcpStream,
    }

    impl Client {
        fn connect(agent: &Agent) -> Self {
            let s = TcpStream::connect(agent.local_addr()).unwrap();
            s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
            Client {
                reader: BufReader::new(s.try_clone().unwrap()),
                writer: s,
            }
        }

        fn send(&mut self, line: &str) {
            writeln!(self.writer, "{line}").unwrap();
        }

        fn line(&mut self) -> String {
            let mut l = String::new();
            self.reader.read_line(&mut l).unwrap();
            l.trim_end().to_string()
        }

        /// Next non-EVT line.
        fn reply(&mut self) -> String {
            loop {
                let l = self.line();
                if !l.starts_with("EVT ") {
                    return l;
                }
            }
        }
    }

    #[test]
    fn hello_and_busy() {
        let agent = start(&local_opts());
        let mut c = Client::connect(&agent);
        c.send("HELLO");
        assert_eq!(c.reply(), "OK rank 0 size 1");
        let mut second = Client::connect(&agent);
        assert_eq!(second.line(), "ERR busy");
        c.send("DETACH");
        assert_eq!(c.reply(), "OK");
        // Reattach after detach.
        std::thread::sleep(Duration::from_millis(50));
        let mut third = Client::connect(&agent);
        third.send("HELLO");
        assert_eq!(third.reply(), "OK rank 0 size 1");
    }

    #[test]
    fn port_in_use_is_reported() {
        let held = TcpListener::bind(("127.0.0.1", 0)).unwrap();
        let port = held.local_addr().unwrap().port();
        let opts = AgentOptions { port, ..local_opts() };
        let err = start_agent(&opts, 3, 4, InspectRegistry::new()).err().unwrap();
        assert!(matches!(err, AgentError::AddressInUse { rank: 3, .. }));
        assert!(err.to_string().contains("address already in use"));
    }

    #[test]
    fn breakpoint_blocks_until_resume() {
        let agent = start(&local_opts());
        let mut c = Client::connect(&agent);
        c.send("BREAK compute");
        assert_eq!(c.reply(), "OK");
        let a = agent.clone();
        let worker = std::thread::spawn(move || {
            let key = crate::harness::probe::current_thread_key();
            a.checkpoint(key, "main", ProbeKind::Enter);
            a.checkpoint(key, "compute", ProbeKind::Enter);
            a.checkpoint(key, "compute", ProbeKind::Exit);
            a.checkpoint(key, "main", ProbeKind::Exit);
        });
        assert_eq!(c.line(), "EVT THREAD_START 0 RUNNING");
        assert_eq!(c.line(), "EVT HIT compute 0 enter");
        c.send("STACK 0");
        assert_eq!(c.reply(), "OK");
        assert_eq!(c.line(), "FRAME compute");
        assert_eq!(c.line(), "FRAME main");
        std::thread::sleep(Duration::from_millis(30));
        assert!(!worker.is_finished());
        c.send("RESUME");
        assert_eq!(c.reply(), "OK");
        worker.join().unwrap();
    }

    #[test]
    fn disconnect_resumes_suspended_threads() {
        let opts = AgentOptions {
            suspend_on_start: true,
            ..local_opts()
        };
        let agent = start(&opts);
        let a = agent.clone();
        let worker = std::thread::spawn(move || {
            let key = crate::harness::probe::current_thread_key();
            a.checkpoint(key, "main", ProbeKind::Enter);
            a.checkpoint(key, "main", ProbeKind::Exit);
        });
        let mut c = Client::connect(&agent);
        assert_eq!(c.line(), "EVT THREAD_START 0 SUSPEND_REQUESTED");
        assert_eq!(c.line(), "EVT SUSPENDED 0");
        drop(c);
        worker.join().unwrap();
    }
}
