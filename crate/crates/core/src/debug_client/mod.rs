//! Multi-rank debugger client: attaches to every agent listed in
//! `mpjdev.conf`, fans commands out, runs scripts and serves the HTTP
//! gateway used by the web console.

pub mod gateway;
pub mod mirror;
pub mod script;
pub mod session;

pub use gateway::{serve_gateway, Gateway, GatewayError, GatewayOptions};
pub use mirror::{RankView, ThreadView};
pub use script::{parse_script, run_script, ScriptFailure, ScriptOptions, Step, Target, Transcript};
pub use session::{AttachOptions, Reply, Session, SessionEvent};

use crate::launcher::conf::ConfFile;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Endpoint {
    pub address: String,
    pub port: u16,
    pub rank: usize,
}

impl Endpoint {
    pub fn from_conf(conf: &ConfFile) -> Vec<Endpoint> {
        conf.records
            .iter()
            .map(|r| Endpoint {
                address: r.address.clone(),
                port: r.debug_port,
                rank: r.rank,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("cannot attach to rank {rank}: {message}")]
    Attach { rank: usize, message: String },
    #[error("protocol error on rank {rank}: {message}")]
    Protocol { rank: usize, message: String },
    #[error("rank {rank} disconnected")]
    Disconnected { rank: usize },
    #[error("no rank {0} in this session")]
    UnknownRank(usize),
    #[error("{0}")]
    Command(String),
    #[error("timeout: {0}")]
    Timeout(String),
}
