//! Connections to every rank's agent, with one reader thread per rank.
//!
//! THREADS and STACK replies have no terminator on the wire, so the client
//! sends `HELLO` right after them; the `OK` of that HELLO closes the
//! multi-line reply. Commands and their replies are matched in FIFO order.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::mirror::{Change, RankView};
use super::{ClientError, Endpoint};
use crate::clock::now_us;
use crate::launcher::conf::ConfFile;
use crate::mdwp::{self, Command, Line};

pub const DEFAULT_REPLY_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_CONNECT_WINDOW: Duration = Duration::from_secs(10);
const EVENT_CHANNEL: usize = 4096;

#[derive(Debug, Clone, Copy)]
pub struct AttachOptions {
    /// How long to keep retrying refused connections.
    pub connect_window: Duration,
    pub reply_timeout: Duration,
}

impl Default for AttachOptions {
    fn default() -> Self {
        AttachOptions {
            connect_window: DEFAULT_CONNECT_WINDOW,
            reply_timeout: DEFAULT_REPLY_TIMEOUT,
        }
    }
}

/// One record of the session event stream. `EVT` lines keep their MDWP kind;
/// mirror changes caused by replies use `STATE` (`[thread, state]`),
/// `THREAD_GONE`, `BREAK`/`CLEAR` (`[name]`), and `DISCONNECT`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionEvent {
    pub ts: u64,
    pub rank: usize,
    pub kind: String,
    pub args: Vec<String>,
}

impl SessionEvent {
    pub fn line(&self) -> String {
        let mut s = format!("EVT {}", self.kind);
        for a in &self.args {
            s.push(' ');
            s.push_str(a);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reply {
    pub lines: Vec<String>,
}

impl Reply {
    pub fn is_ok(&self) -> bool {
        self.lines.first().is_some_and(|l| l == "OK" || l.starts_with("OK "))
    }

    /// Text after `OK ` on the first line.
    pub fn payload(&self) -> Option<&str> {
        self.lines.first().and_then(|l| l.strip_prefix("OK "))
    }

    pub fn error_code(&self) -> Option<&str> {
        self.lines.first().and_then(|l| l.strip_prefix("ERR "))
    }

    pub fn frames(&self) -> Vec<&str> {
        self.lines.iter().filter_map(|l| l.strip_prefix("FRAME ")).collect()
    }
}

type ReplyTx = mpsc::Sender<Result<Reply, ClientError>>;

struct Pending {
    /// `None` for the delimiting HELLO.
    cmd: Option<Command>,
    tx: Option<ReplyTx>,
}

struct ConnState {
    writer: Option<TcpStream>,
    inflight: VecDeque<Pending>,
}

struct Conn {
    endpoint: Endpoint,
    state: Mutex<ConnState>,
}

struct State {
    mirror: BTreeMap<usize, RankView>,
    events: Vec<SessionEvent>,
    hits: usize,
}

struct Shared {
    state: Mutex<State>,
    cv: Condvar,
    tx: tokio::sync::broadcast::Sender<SessionEvent>,
}

pub struct Session {
    conns: BTreeMap<usize, Arc<Conn>>,
    shared: Arc<Shared>,
    reply_timeout: Duration,
}

fn connect_with_retry(ep: &Endpoint, window: Duration) -> Result<TcpStream, ClientError> {
    let deadline = Instant::now() + window;
    let addrs: Vec<SocketAddr> = (ep.address.as_str(), ep.port)
        .to_socket_addrs()
        .map_err(|e| ClientError::Attach {
            rank: ep.rank,
            message: format!("cannot resolve {}: {e}", ep.address),
        })?
        .collect();
    loop {
        let mut last = None;
        for a in &addrs {
            match TcpStream::connect_timeout(a, Duration::from_secs(2)) {
                Ok(s) => return Ok(s),
                Err(e) => last = Some(e),
            }
        }
        let e = last.unwrap_or_else(|| ErrorKind::AddrNotAvailable.into());
        let retryable = matches!(
            e.kind(),
            ErrorKind::ConnectionRefused | ErrorKind::TimedOut | ErrorKind::ConnectionReset
        );
        if !retryable || Instant::now() >= deadline {
            return Err(ClientError::Attach {
                rank: ep.rank,
                message: format!("cannot connect to {}:{}: {e}", ep.address, ep.port),
            });
        }
        std::thread::sleep(Duration::from_millis(50));
    }
}

impl Shared {
    /// Called with the state lock held so subscribers see mirror order.
    fn publish(&self, ev: SessionEvent) {
        let _ = self.tx.send(ev);
    }

    fn publish_changes(&self, rank: usize, changes: Vec<Change>) {
        let ts = now_us();
        for c in changes {
            let (kind, args) = match c {
                Change::Thread(id, Some(s)) => ("STATE", vec![id.to_string(), s.to_string()]),
                Change::Thread(id, None) => ("THREAD_GONE", vec![id.to_string()]),
                Change::Breakpoint(n, true) => ("BREAK", vec![n]),
                Change::Breakpoint(n, false) => ("CLEAR", vec![n]),
            };
            self.publish(SessionEvent {
                ts,
                rank,
                kind: kind.to_string(),
                args,
            });
        }
    }

    fn on_evt(&self, rank: usize, kind: String, args: Vec<String>) {
        let mut st = self.state.lock().unwrap();
        let ev = SessionEvent {
            ts: now_us(),
            rank,
            kind,
            args,
        };
        if ev.kind == mdwp::EVT_HIT {
            st.hits += 1;
        }
        if let Some(view) = st.mirror.get_mut(&rank) {
            // The EVT itself carries the change; no extra STATE records.
            view.apply_event(&ev.kind, &ev.args);
        }
        st.events.push(ev.clone());
        self.publish(ev);
        self.cv.notify_all();
    }

    fn on_reply(&self, rank: usize, p: Pending, lines: Vec<String>) {
        let reply = Reply { lines };
        if let Some(cmd) = &p.cmd {
            let mut st = self.state.lock().unwrap();
            let changes = match st.mirror.get_mut(&rank) {
                Some(view) => view.apply_reply(cmd, &reply.lines),
                None => Vec::new(),
            };
            self.publish_changes(rank, changes);
            self.cv.notify_all();
        }
        if let Some(tx) = p.tx {
            let _ = tx.send(Ok(reply));
        }
    }

    fn on_disconnect(&self, rank: usize) {
        let mut st = self.state.lock().unwrap();
        if let Some(v) = st.mirror.get_mut(&rank) {
            v.connected = false;
        }
        let ev = SessionEvent {
            ts: now_us(),
            rank,
            kind: "DISCONNECT".into(),
            args: Vec::new(),
        };
        self.publish(ev);
        self.cv.notify_all();
    }
}

fn reader_loop(stream: TcpStream, conn: Arc<Conn>, shared: Arc<Shared>) {
    let rank = conn.endpoint.rank;
    let mut current: Option<(Pending, Vec<String>)> = None;
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        if line.starts_with("EVT ") {
            if let Some(Line::Evt { kind, args }) = Line::parse(&line) {
                shared.on_evt(rank, kind, args);
            }
            continue;
        }
        if Line::is_continuation(&line) {
            if let Some((_, buf)) = &mut current {
                buf.push(line);
            }
            continue;
        }
        if let Some((p, buf)) = current.take() {
            shared.on_reply(rank, p, buf);
        }
        let Some(p) = conn.state.lock().unwrap().inflight.pop_front() else {
            continue;
        };
        if line == "OK" && p.cmd.as_ref().is_some_and(Command::is_multiline) {
            current = Some((p, vec![line]));
        } else {
            shared.on_reply(rank, p, vec![line]);
        }
    }
    if let Some((p, buf)) = current.take() {
        shared.on_reply(rank, p, buf);
    }
    let drained: Vec<Pending> = {
        let mut st = conn.state.lock().unwrap();
        st.writer = None;
        st.inflight.drain(..).collect()
    };
    for p in drained {
        if let Some(tx) = p.tx {
            let _ = tx.send(Err(ClientError::Disconnected { rank }));
        }
    }
    shared.on_disconnect(rank);
}

impl Session {
    /// Connects to every rank in `conf`, retrying refused connections for
    /// the connect window, and checks each agent's HELLO.
    pub fn attach(conf: &ConfFile, opts: AttachOptions) -> Result<Session, ClientError> {
        let endpoints = Endpoint::from_conf(conf);
        let (tx, _) = tokio::sync::broadcast::channel(EVENT_CHANNEL);
        let shared = Arc::new(Shared {
            state: Mutex::new(State {
                mirror: endpoints
                    .iter()
                    .map(|e| (e.rank, RankView::new(e.rank, &e.address, e.port)))
                    .collect(),
                events: Vec::new(),
                hits: 0,
            }),
            cv: Condvar::new(),
            tx,
        });
        let mut session = Session {
            conns: BTreeMap::new(),
            shared,
            reply_timeout: opts.reply_timeout,
        };
        for ep in endpoints {
            let stream = connect_with_retry(&ep, opts.connect_window)?;
            let _ = stream.set_nodelay(true);
            let reader = stream.try_clone().map_err(|e| ClientError::Attach {
                rank: ep.rank,
                message: e.to_string(),
            })?;
            let rank = ep.rank;
            let conn = Arc::new(Conn {
                endpoint: ep,
                state: Mutex::new(ConnState {
                    writer: Some(stream),
                    inflight: VecDeque::new(),
                }),
            });
            session
                .shared
                .state
                .lock()
                .unwrap()
                .mirror
                .get_mut(&rank)
                .unwrap()
                .connected = true;
            let (c, s) = (conn.clone(), session.shared.clone());
            std::thread::Builder::new()
                .name(format!("mpxdbg-rank-{rank}"))
                .spawn(move || reader_loop(reader, c, s))
                .map_err(|e| ClientError::Attach {
                    rank,
                    message: e.to_string(),
                })?;
            session.conns.insert(rank, conn);
        }
        for &rank in session.conns.keys() {
            let reply = session.send(rank, &Command::Hello).map_err(|e| match e {
                ClientError::Disconnected { rank } => ClientError::Attach {
                    rank,
                    message: "agent closed the connection".into(),
                },
                e => e,
            })?;
            check_hello(rank, &reply)?;
        }
        Ok(session)
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.conns.keys().copied().collect()
    }

    pub fn endpoint(&self, rank: usize) -> Option<&Endpoint> {
        self.conns.get(&rank).map(|c| &c.endpoint)
    }

    fn submit(&self, rank: usize, cmd: &Command) -> Result<mpsc::Receiver<Result<Reply, ClientError>>, ClientError> {
        let conn = self.conns.get(&rank).ok_or(ClientError::UnknownRank(rank))?;
        let (tx, rx) = mpsc::channel();
        let mut st = conn.state.lock().unwrap();
        let Some(w) = st.writer.as_ref() else {
            return Err(ClientError::Disconnected { rank });
        };
        let mut w = w;
        let mut text = format!("{cmd}\n");
        if cmd.is_multiline() {
            text.push_str("HELLO\n");
        }
        if w.write_all(text.as_bytes()).is_err() {
            return Err(ClientError::Disconnected { rank });
        }
        st.inflight.push_back(Pending {
            cmd: Some(cmd.clone()),
            tx: Some(tx),
        });
        if cmd.is_multiline() {
            st.inflight.push_back(Pending { cmd: None, tx: None });
        }
        Ok(rx)
    }

    fn wait_reply(
        &self,
        rank: usize,
        cmd: &Command,
        rx: mpsc::Receiver<Result<Reply, ClientError>>,
    ) -> Result<Reply, ClientError> {
        match rx.recv_timeout(self.reply_timeout) {
            Ok(r) => r,
            Err(mpsc::RecvTimeoutError::Timeout) => Err(ClientError::Timeout(format!(
                "rank {rank}: no reply to {cmd} within {:?}",
                self.reply_timeout
            ))),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(ClientError::Disconnected { rank }),
        }
    }

    /// Sends one command and waits for its complete reply.
    pub fn send(&self, rank: usize, cmd: &Command) -> Result<Reply, ClientError> {
        let rx = self.submit(rank, cmd)?;
        self.wait_reply(rank, cmd, rx)
    }

    pub fn send_line(&self, rank: usize, line: &str) -> Result<Reply, ClientError> {
        let cmd = Command::parse(line).map_err(|e| ClientError::Command(e.to_string()))?;
        self.send(rank, &cmd)
    }

    /// Sends `cmd` to every rank at once and collects replies by rank.
    /// Failures are per-rank entries, not an overall error.
    pub fn broadcast(&self, cmd: &Command) -> BTreeMap<usize, Result<Reply, ClientError>> {
        let submitted: Vec<(usize, Result<_, _>)> = self.conns.keys().map(|&r| (r, self.submit(r, cmd))).collect();
        submitted
            .into_iter()
            .map(|(r, rx)| (r, rx.and_then(|rx| self.wait_reply(r, cmd, rx))))
            .collect()
    }

    pub fn mirror(&self) -> BTreeMap<usize, RankView> {
        self.shared.state.lock().unwrap().mirror.clone()
    }

    /// EVT records received so far, in arrival order.
    pub fn events(&self) -> Vec<SessionEvent> {
        self.shared.state.lock().unwrap().events.clone()
    }

    pub fn hit_count(&self) -> usize {
        self.shared.state.lock().unwrap().hits
    }

    pub fn subscribe(&self) -> tokio::sync::broadcast::Receiver<SessionEvent> {
        self.shared.tx.subscribe()
    }

    pub fn is_connected(&self, rank: usize) -> bool {
        self.conns
            .get(&rank)
            .is_some_and(|c| c.state.lock().unwrap().writer.is_some())
    }

    /// Blocks until at least `k` HIT events have arrived in total.
    pub fn wait_hits(&self, k: usize, timeout: Duration) -> Result<(), ClientError> {
        self.wait_until(timeout, |st| st.hits >= k)
            .map_err(|hits| ClientError::Timeout(format!("saw {hits} of {k} HIT events")))
    }

    /// Blocks until every rank's agent has closed its connection.
    pub fn wait_exit(&self, timeout: Duration) -> Result<(), ClientError> {
        self.wait_until(timeout, |st| st.mirror.values().all(|v| !v.connected))
            .map_err(|_| {
                let live: Vec<String> = self
                    .mirror()
                    .values()
                    .filter(|v| v.connected)
                    .map(|v| v.rank.to_string())
                    .collect();
                ClientError::Timeout(format!("ranks still running: {}", live.join(",")))
            })
    }

    fn wait_until(&self, timeout: Duration, done: impl Fn(&State) -> bool) -> Result<(), usize> {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.state.lock().unwrap();
        while !done(&st) {
            let now = Instant::now();
            if now >= deadline {
                return Err(st.hits);
            }
            st = self.shared.cv.wait_timeout(st, deadline - now).unwrap().0;
        }
        Ok(())
    }

    /// Drops every connection; agents treat this as DETACH.
    pub fn close(&self) {
        for c in self.conns.values() {
            if let Some(w) = c.state.lock().unwrap().writer.as_ref() {
                let _ = w.shutdown(std::net::Shutdown::Both);
            }
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.close();
    }
}

fn check_hello(rank: usize, reply: &Reply) -> Result<(), ClientError> {
    if let Some(code) = reply.error_code() {
        return Err(ClientError::Attach {
            rank,
            message: format!("agent answered ERR {code}"),
        });
    }
    let fields: Vec<&str> = reply.payload().unwrap_or("").split(' ').collect();
    match fields.as_slice() {
        ["rank", r, "size", _] if r.parse::<usize>() == Ok(rank) => Ok(()),
        _ => Err(ClientError::Protocol {
            rank,
            message: format!("HELLO reply {:?} does not match conf rank {rank}", reply.lines),
        }),
    }
}
