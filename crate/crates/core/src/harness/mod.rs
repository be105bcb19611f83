//! Minimal message-passing runtime.
//!
//! Ranks communicate with blocking point-to-point `send`/`recv` matched on
//! exact (source, tag), plus a linear `barrier`. In multicore mode ranks are
//! threads sharing an in-process [`Fabric`]; in cluster mode they are
//! processes connected over TCP using the endpoints in `mpjdev.conf`.

pub mod env;
pub mod inspect;
mod mailbox;
pub mod probe;
pub mod transport;

use std::sync::{Arc, Mutex};

pub use env::{Environment, Mode};
pub use inspect::InspectRegistry;
pub use probe::{probe_scope, ProbeKind, ProbeSite, ThreadKey};

use mailbox::Mailbox;
use transport::{ClusterTransport, MAX_PAYLOAD};

use crate::launcher::conf::ConfFile;

/// Tag reserved for barrier traffic.
pub const BARRIER_TAG: i32 = i32::MIN;

/// Default per-channel bound on in-process queues.
pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum CommError {
    #[error("config error: {0}")]
    Config(String),
    #[error("connect error: {0}")]
    Connect(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("state error: {0}")]
    State(String),
}

/// In-process message fabric for multicore mode.
pub struct Fabric {
    mailboxes: Vec<Mailbox>,
    taken: Mutex<Vec<bool>>,
}

impl Fabric {
    pub fn new(size: usize) -> Arc<Self> {
        Self::with_capacity(size, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_capacity(size: usize, capacity: usize) -> Arc<Self> {
        assert!(size >= 1 && capacity >= 1);
        Arc::new(Fabric {
            mailboxes: (0..size).map(|_| Mailbox::new(Some(capacity))).collect(),
            taken: Mutex::new(vec![false; size]),
        })
    }

    pub fn size(&self) -> usize {
        self.mailboxes.len()
    }

    /// Hands out the context for `rank`; each rank may be claimed once.
    pub fn context(self: &Arc<Self>, rank: usize) -> Result<CommContext, CommError> {
        let mut taken = self.taken.lock().unwrap();
        match taken.get_mut(rank) {
            None => Err(CommError::Argument(format!(
                "rank {rank} out of range for size {}",
                self.size()
            ))),
            Some(true) => Err(CommError::State(format!("context for rank {rank} already exists"))),
            Some(t) => {
                *t = true;
                Ok(CommContext {
                    rank,
                    size: self.size(),
                    mode: Mode::Multicore,
                    transport: Transport::Local(self.clone()),
                    inspect: InspectRegistry::new(),
                    finalized: false,
                })
            }
        }
    }

    pub fn contexts(self: &Arc<Self>) -> Result<Vec<CommContext>, CommError> {
        (0..self.size()).map(|r| self.context(r)).collect()
    }
}

enum Transport {
    Local(Arc<Fabric>),
    Cluster(ClusterTransport),
}

/// One rank's handle on the runtime. Owned by the rank's thread.
pub struct CommContext {
    rank: usize,
    size: usize,
    mode: Mode,
    transport: Transport,
    inspect: Arc<InspectRegistry>,
    finalized: bool,
}

static PROCESS_FABRIC: Mutex<Option<Arc<Fabric>>> = Mutex::new(None);

/// Creates the context for the rank described by `env`.
///
/// Multicore contexts created this way share one process-wide fabric sized
/// by the first call. Cluster contexts bind their data port immediately and
/// connect to peers on first send.
pub fn init(env: &Environment) -> Result<CommContext, CommError> {
    let rank = env
        .rank
        .ok_or_else(|| CommError::Config(format!("{} is not set", env::ENV_RANK)))?;
    match env.mode {
        Mode::Multicore => {
            let fabric = {
                let mut global = PROCESS_FABRIC.lock().unwrap();
                match &*global {
                    Some(f) if f.size() != env.size => {
                        return Err(CommError::Config(format!(
                            "process fabric has size {}, requested {}",
                            f.size(),
                            env.size
                        )))
                    }
                    Some(f) => f.clone(),
                    None => global.insert(Fabric::new(env.size)).clone(),
                }
            };
            fabric.context(rank)
        }
        Mode::Cluster => {
            let path = env
                .conf
                .as_ref()
                .ok_or_else(|| CommError::Config(format!("{} is not set", env::ENV_CONF)))?;
            let conf = ConfFile::read(path).map_err(|e| CommError::Config(e.to_string()))?;
            let transport = ClusterTransport::start(rank, env.size, &conf, env.connect_timeout)?;
            Ok(CommContext {
                rank,
                size: env.size,
                mode: Mode::Cluster,
                transport: Transport::Cluster(transport),
                inspect: InspectRegistry::new(),
                finalized: false,
            })
        }
    }
}

impl CommContext {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn inspectables(&self) -> Arc<InspectRegistry> {
        self.inspect.clone()
    }

    /// Replaces the registry, e.g. with one a debug agent already holds.
    pub fn with_inspectables(mut self, registry: Arc<InspectRegistry>) -> Self {
        self.inspect = registry;
        self
    }

    /// Exposes a named value to the debugger's INSPECT command. The provider
    /// only runs while the registering thread is suspended at a checkpoint.
    pub fn register_inspectable(
        &self,
        name: &str,
        provider: impl Fn() -> String + Send + Sync + 'static,
    ) -> Result<(), CommError> {
        self.inspect.register(name, provider)
    }

    fn check_live(&self) -> Result<(), CommError> {
        if self.finalized {
            Err(CommError::State(format!("rank {} context is finalized", self.rank)))
        } else {
            Ok(())
        }
    }

    fn peer(&self, rank: i32) -> Result<usize, CommError> {
        usize::try_from(rank)
            .ok()
            .filter(|r| *r < self.size)
            .ok_or_else(|| CommError::Argument(format!("rank {rank} out of range for size {}", self.size)))
    }

    pub fn send(&mut self, dest: i32, tag: i32, payload: &[u8]) -> Result<(), CommError> {
        probe_scope("MPX_Send", || {
            self.check_live()?;
            let dest = self.peer(dest)?;
            if tag == BARRIER_TAG {
                return Err(CommError::Argument(format!("tag {tag} is reserved")));
            }
            if payload.len() > MAX_PAYLOAD {
                return Err(CommError::Argument("payload exceeds 2^31-1 bytes".into()));
            }
            self.raw_send(dest, tag, payload)
        })
    }

    pub fn recv(&mut self, src: i32, tag: i32) -> Result<Vec<u8>, CommError> {
        probe_scope("MPX_Recv", || {
            self.check_live()?;
            let src = self.peer(src)?;
            if tag == BARRIER_TAG {
                return Err(CommError::Argument(format!("tag {tag} is reserved")));
            }
            self.raw_recv(src, tag)
        })
    }

    /// Linear gather at rank 0 followed by a release fan-out.
    pub fn barrier(&mut self) -> Result<(), CommError> {
        probe_scope("MPX_Barrier", || {
            self.check_live()?;
            self.raw_barrier()
        })
    }

    /// Synchronizes with all ranks and closes the context. Every later
    /// operation fails with a state error.
    pub fn finalize(&mut self) -> Result<(), CommError> {
        self.check_live()?;
        let result = self.raw_barrier();
        self.close();
        result
    }

    fn raw_barrier(&mut self) -> Result<(), CommError> {
        if self.size == 1 {
            return Ok(());
        }
        if self.rank == 0 {
            for r in 1..self.size {
                self.raw_recv(r, BARRIER_TAG)?;
            }
            for r in 1..self.size {
                self.raw_send(r, BARRIER_TAG, &[])?;
            }
        } else {
            self.raw_send(0, BARRIER_TAG, &[])?;
            self.raw_recv(0, BARRIER_TAG)?;
        }
        Ok(())
    }

    fn raw_send(&self, dest: usize, tag: i32, payload: &[u8]) -> Result<(), CommError> {
        match &self.transport {
            Transport::Local(f) => {
                f.mailboxes[dest].push(self.rank, tag, payload.to_vec());
                Ok(())
            }
            Transport::Cluster(t) => t.send(dest, tag, payload),
        }
    }

    fn raw_recv(&self, src: usize, tag: i32) -> Result<Vec<u8>, CommError> {
        match &self.transport {
            Transport::Local(f) => f.mailboxes[self.rank]
                .pop(src, tag)
                .map_err(|_| CommError::Transport(format!("rank {src} finalized before sending on tag {tag}"))),
            Transport::Cluster(t) => t.recv(src, tag),
        }
    }

    fn close(&mut self) {
        if self.finalized {
            return;
        }
        self.finalized = true;
        match &self.transport {
            Transport::Local(f) => {
                for (r, mb) in f.mailboxes.iter().enumerate() {
                    if r != self.rank {
                        mb.close_source(self.rank);
                    }
                }
            }
            Transport::Cluster(t) => t.shutdown(),
        }
    }
}

impl Drop for CommContext {
    fn drop(&mut self) {
        self.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    fn singleton() -> CommContext {
        Fabric::new(1).context(0).unwrap()
    }

    #[test]
    fn singleton_context() {
        let ctx = singleton();
        assert_eq!((ctx.rank(), ctx.size()), (0, 1));
    }

    #[test]
    fn self_send_loopback() {
        let mut ctx = singleton();
        ctx.send(0, 7, &[1, 2, 3]).unwrap();
        assert_eq!(ctx.recv(0, 7).unwrap(), vec![1, 2, 3]);
        ctx.send(0, 0, &[]).unwrap();
        assert_eq!(ctx.recv(0, 0).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn fifo_on_one_channel() {
        let mut ctx = singleton();
        ctx.send(0, 3, b"x").unwrap();
        ctx.send(0, 3, b"y").unwrap();
        assert_eq!(ctx.recv(0, 3).unwrap(), b"x");
        assert_eq!(ctx.recv(0, 3).unwrap(), b"y");
    }

    #[test]
    fn bounds_are_argument_errors() {
        let mut ctx = singleton();
        assert!(matches!(ctx.send(1, 0, b""), Err(CommError::Argument(_))));
        assert!(matches!(ctx.recv(-1, 0), Err(CommError::Argument(_))));
        assert!(matches!(ctx.send(0, BARRIER_TAG, b""), Err(CommError::Argument(_))));
    }

    #[test]
    fn operations_after_finalize_fail() {
        let mut ctx = singleton();
        ctx.barrier().unwrap();
        ctx.finalize().unwrap();
        assert!(matches!(ctx.barrier(), Err(CommError::State(_))));
        assert!(matches!(ctx.send(0, 0, b""), Err(CommError::State(_))));
        assert!(matches!(ctx.recv(0, 0), Err(CommError::State(_))));
    }

    #[test]
    fn context_claimed_once() {
        let f = Fabric::new(2);
        let _a = f.context(0).unwrap();
        assert!(matches!(f.context(0), Err(CommError::State(_))));
        assert!(matches!(f.context(2), Err(CommError::Argument(_))));
    }

    #[test]
    fn two_rank_exchange() {
        let f = Fabric::new(2);
        let mut ctxs = f.contexts().unwrap();
        let mut c1 = ctxs.pop().unwrap();
        let mut c0 = ctxs.pop().unwrap();
        let h = std::thread::spawn(move || {
            let got = c1.recv(0, 1).unwrap();
            c1.finalize().unwrap();
            got
        });
        c0.send(1, 1, b"ab").unwrap();
        c0.finalize().unwrap();
        assert_eq!(h.join().unwrap(), b"ab");
    }

    #[test]
    fn recv_from_finalized_peer_errors() {
        let f = Fabric::new(2);
        let mut ctxs = f.contexts().unwrap();
        let c1 = ctxs.pop().unwrap();
        let mut c0 = ctxs.pop().unwrap();
        drop(c1);
        assert!(matches!(c0.recv(1, 0), Err(CommError::Transport(_))));
    }

    #[test]
    fn barrier_orders_all_ranks() {
        let n = 4;
        let f = Fabric::new(n);
        let handles: Vec<_> = f
            .contexts()
            .unwrap()
            .into_iter()
            .map(|mut ctx| {
                std::thread::spawn(move || {
                    std::thread::sleep(std::time::Duration::from_millis(5 * ctx.rank() as u64));
                    let before = Instant::now();
                    ctx.barrier().unwrap();
                    let after = Instant::now();
                    ctx.finalize().unwrap();
                    (before, after)
                })
            })
            .collect();
        let times: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let max_before = times.iter().map(|t| t.0).max().unwrap();
        let min_after = times.iter().map(|t| t.1).min().unwrap();
        assert!(min_after >= max_before);
    }
}
