//! Rank launcher: placement, debug-port assignment, `mpjdev.conf`, spawning
//! and output multiplexing.

pub mod conf;
pub mod config;
pub mod placement;
pub mod spawn;

use std::net::TcpListener;
use std::path::{Path, PathBuf};

pub use conf::{ConfFile, ConfRecord};
pub use config::{parse_cli, LaunchConfig};
pub use placement::{assign_ranks, compute_debug_port, Placement, PlacementEntry};
pub use spawn::{monitor, spawn, ExitReport, OutputSink, ProcessSet, RankOutcome};

use crate::harness::transport::bind_ip;
use crate::harness::Mode;

#[derive(Debug, thiserror::Error)]
pub enum LaunchError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("conf file error: {0}")]
    Conf(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to launch rank {rank}: {message}")]
    Spawn { rank: usize, message: String },
}

/// Writes `placement` to `path` and returns the conf file read back from disk.
pub fn write_conf(placement: &Placement, path: &Path) -> Result<ConfFile, LaunchError> {
    let conf = placement.to_conf()?;
    conf.write(path)?;
    let back = ConfFile::read(path)?;
    if back != conf {
        return Err(LaunchError::Conf(format!(
            "{} did not read back identically",
            path.display()
        )));
    }
    Ok(back)
}

fn port_free(address: &str, port: u16) -> bool {
    TcpListener::bind((bind_ip(address), port)).is_ok()
}

/// Ranks whose conf port or data port (conf port + 1) cannot be bound right now.
pub fn busy_ports(placement: &Placement) -> Vec<(usize, u16)> {
    placement
        .entries
        .iter()
        .filter_map(|e| {
            let p = e.debug_port?;
            let data_ok = p.checked_add(1).is_some_and(|d| port_free(&e.address, d));
            (!port_free(&e.address, p) || !data_ok).then_some((e.rank, p))
        })
        .collect()
}

/// Finds a base port whose whole port window is currently bindable.
pub fn pick_free_base(placement: &Placement) -> Result<Placement, LaunchError> {
    let max_local = placement.entries.iter().map(|e| e.local_index).max().unwrap_or(0);
    let nodes = placement.entries.iter().map(|e| e.node).max().unwrap_or(0) + 1;
    let span = 2 * max_local + 2 + 100 * nodes;
    for _ in 0..64 {
        let probe = TcpListener::bind(("127.0.0.1", 0))
            .and_then(|l| l.local_addr())
            .map_err(|e| LaunchError::Config(format!("cannot probe for free ports: {e}")))?;
        let base = (probe.port() as usize).clamp(20000, 65535 - span) as u16;
        let Ok(candidate) = placement
            .clone()
            .with_debug_ports(base)
            .and_then(Placement::resolve_colocated)
        else {
            continue;
        };
        if busy_ports(&candidate).is_empty() {
            return Ok(candidate);
        }
    }
    Err(LaunchError::Config("no free port window found".into()))
}

pub struct Prepared {
    pub placement: Placement,
    pub conf: Option<ConfFile>,
    /// Ranks whose ports were already bound when probed.
    pub busy: Vec<(usize, u16)>,
}

/// Everything up to spawning: placement, ports and the conf file.
pub fn prepare(config: &LaunchConfig) -> Result<Prepared, LaunchError> {
    config.validate()?;
    let placement = assign_ranks(&config.machines, config.np);
    let placement = match (config.debug_port_base, config.mode) {
        (Some(base), _) => placement.with_debug_ports(base)?.resolve_colocated()?,
        (None, Mode::Cluster) => pick_free_base(&placement)?,
        (None, Mode::Multicore) => placement,
    };
    let busy = if config.debug() {
        busy_ports(&placement)
    } else {
        Vec::new()
    };
    let conf = if placement.entries.iter().all(|e| e.debug_port.is_some()) {
        Some(write_conf(&placement, &config.conf_path)?)
    } else {
        None
    };
    if config.profile {
        std::fs::create_dir_all(&config.profile_dir).map_err(|e| LaunchError::Io {
            path: config.profile_dir.clone(),
            source: e,
        })?;
    }
    Ok(Prepared { placement, conf, busy })
}

/// Prepares, spawns and monitors a run.
pub fn launch(config: &LaunchConfig, sink: OutputSink) -> Result<ExitReport, LaunchError> {
    let prepared = prepare(config)?;
    for (rank, port) in &prepared.busy {
        sink(
            spawn::Stream::Stderr,
            &format!("mpxrun: warning: port {port} for rank {rank} is already bound"),
        );
    }
    let procs = spawn(config, &prepared.placement)?;
    Ok(monitor(procs, sink))
}
