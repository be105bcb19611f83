//! Cluster-mode TCP transport.
//!
//! Each rank listens on the port one above its `mpjdev.conf` port (the
//! conf port itself belongs to the debug agent). Connections are opened
//! lazily on first send, one per directed pair of ranks. The opener
//! announces its rank as a 4-byte big-endian integer; every message is then
//! framed as a 4-byte big-endian tag, a 4-byte big-endian length, and the
//! payload.

use std::io::{ErrorKind, Read, Write};
use std::net::{IpAddr, Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::mailbox::Mailbox;
use super::CommError;
use crate::launcher::conf::ConfFile;

pub const MAX_PAYLOAD: usize = i32::MAX as usize;

/// Data port of a rank whose conf record lists `conf_port`.
pub fn data_port(conf_port: u16) -> Option<u16> {
    conf_port.checked_add(1)
}

/// Address to bind for a conf entry: the literal IP if it is one, else all interfaces.
pub(crate) fn bind_ip(address: &str) -> IpAddr {
    if address == "localhost" {
        return IpAddr::V4(Ipv4Addr::LOCALHOST);
    }
    address.parse().unwrap_or(IpAddr::V4(Ipv4Addr::UNSPECIFIED))
}

pub fn encode_frame(tag: i32, payload: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + payload.len());
    buf.extend_from_slice(&tag.to_be_bytes());
    buf.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    buf.extend_from_slice(payload);
    buf
}

pub fn read_frame(r: &mut impl Read) -> std::io::Result<(i32, Vec<u8>)> {
    let mut header = [0u8; 8];
    r.read_exact(&mut header)?;
    let tag = i32::from_be_bytes(header[..4].try_into().unwrap());
    let len = u32::from_be_bytes(header[4..].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(std::io::Error::new(
            ErrorKind::InvalidData,
            "frame length exceeds 2^31-1",
        ));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok((tag, payload))
}

pub(crate) struct ClusterTransport {
    rank: usize,
    peers: Vec<(String, u16)>,
    mailbox: Arc<Mailbox>,
    outgoing: Vec<Mutex<Option<TcpStream>>>,
    timeout: Duration,
    stop: Arc<AtomicBool>,
    local_addr: SocketAddr,
}

impl ClusterTransport {
    pub fn start(rank: usize, size: usize, conf: &ConfFile, timeout: Duration) -> Result<Self, CommError> {
        if conf.len() != size {
            return Err(CommError::Config(format!(
                "conf lists {} ranks but size is {size}",
                conf.len()
            )));
        }
        let mut peers = Vec::with_capacity(size);
        for rec in &conf.records {
            let port = data_port(rec.debug_port).ok_or_else(|| {
                CommError::Config(format!("rank {}: no data port above {}", rec.rank, rec.debug_port))
            })?;
            peers.push((rec.address.clone(), port));
        }
        let (ref own_addr, own_port) = peers[rank];
        let listener = TcpListener::bind((bind_ip(own_addr), own_port))
            .map_err(|e| CommError::Connect(format!("rank {rank}: cannot listen on {own_addr}:{own_port}: {e}")))?;
        let local_addr = listener.local_addr().map_err(|e| CommError::Connect(e.to_string()))?;
        let mailbox = Arc::new(Mailbox::new(None));
        let stop = Arc::new(AtomicBool::new(false));
        {
            let mailbox = mailbox.clone();
            let stop = stop.clone();
            std::thread::Builder::new()
                .name(format!("mpx-accept-{rank}"))
                .spawn(move || accept_loop(listener, size, mailbox, stop))
                .map_err(|e| CommError::Transport(e.to_string()))?;
        }
        Ok(ClusterTransport {
            rank,
            peers,
            mailbox,
            outgoing: (0..size).map(|_| Mutex::new(None)).collect(),
            timeout,
            stop,
            local_addr,
        })
    }

    pub fn send(&self, dest: usize, tag: i32, payload: &[u8]) -> Result<(), CommError> {
        if dest == self.rank {
            self.mailbox.push(self.rank, tag, payload.to_vec());
            return Ok(());
        }
        let mut slot = self.outgoing[dest].lock().unwrap();
        if slot.is_none() {
            *slot = Some(self.connect(dest)?);
        }
        let stream = slot.as_mut().unwrap();
        stream
            .write_all(&encode_frame(tag, payload))
            .map_err(|e| CommError::Transport(format!("send to rank {dest}: {e}")))
    }

    pub fn recv(&self, src: usize, tag: i32) -> Result<Vec<u8>, CommError> {
        self.mailbox
            .pop(src, tag)
            .map_err(|_| CommError::Transport(format!("rank {src} closed its connection before sending on tag {tag}")))
    }

    fn connect(&self, dest: usize) -> Result<TcpStream, CommError> {
        let (host, port) = &self.peers[dest];
        let deadline = Instant::now() + self.timeout;
        let mut last_err = String::from("timed out");
        loop {
            let addrs: Vec<SocketAddr> = match (host.as_str(), *port).to_socket_addrs() {
                Ok(a) => a.collect(),
                Err(e) => {
                    last_err = e.to_string();
                    Vec::new()
                }
            };
            for addr in addrs {
                let remaining = deadline
                    .saturating_duration_since(Instant::now())
                    .max(Duration::from_millis(1));
                match TcpStream::connect_timeout(&addr, remaining) {
                    Ok(mut s) => {
                        let _ = s.set_nodelay(true);
                        s.write_all(&(self.rank as u32).to_be_bytes())
                            .map_err(|e| CommError::Transport(format!("handshake with rank {dest}: {e}")))?;
                        return Ok(s);
                    }
                    Err(e) => last_err = e.to_string(),
                }
            }
            if Instant::now() >= deadline {
                return Err(CommError::Connect(format!(
                    "rank {dest} at {host}:{port} unreachable after {:?}: {last_err}",
                    self.timeout
                )));
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    pub fn shutdown(&self) {
        for slot in &self.outgoing {
            if let Some(s) = slot.lock().unwrap().take() {
                let _ = s.shutdown(Shutdown::Write);
            }
        }
        if !self.stop.swap(true, Ordering::SeqCst) {
            // Wake the accept loop so it observes the stop flag.
            let wake = if self.local_addr.ip().is_unspecified() {
                SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), self.local_addr.port())
            } else {
                self.local_addr
            };
            let _ = TcpStream::connect_timeout(&wake, Duration::from_millis(200));
        }
    }
}

impl Drop for ClusterTransport {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, size: usize, mailbox: Arc<Mailbox>, stop: Arc<AtomicBool>) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        let mailbox = mailbox.clone();
        let _ = std::thread::Builder::new()
            .name("mpx-reader".into())
            .spawn(move || read_loop(stream, size, &mailbox));
    }
}

fn read_loop(mut stream: TcpStream, size: usize, mailbox: &Mailbox) {
    let mut hello = [0u8; 4];
    if stream.read_exact(&mut hello).is_err() {
        return;
    }
    let src = u32::from_be_bytes(hello) as usize;
    if src >= size {
        return;
    }
    let mut reader = std::io::BufReader::new(stream);
    while let Ok((tag, payload)) = read_frame(&mut reader) {
        mailbox.push(src, tag, payload);
    }
    mailbox.close_source(src);
}
