//! In-process debuggee: every rank runs on its own thread with a debug
//! agent on an ephemeral port.

#![allow(dead_code)]

use std::net::TcpListener;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use mpx_core::debug_agent::{start_agent, AgentError, AgentHub, AgentOptions};
use mpx_core::harness::probe::{current_thread_key, set_current_rank, with_dispatch, Dispatch};
use mpx_core::harness::InspectRegistry;
use mpx_core::{probe_scope, CommContext, ConfFile, ConfRecord, Fabric};

pub struct Job {
    pub conf: ConfFile,
    pub hub: Arc<AgentHub>,
    ranks: Vec<JoinHandle<()>>,
}

impl Job {
    /// Starts `size` ranks of [`demo_body`]. With `suspend` every rank stops
    /// at its first probe until a client resumes it.
    pub fn start(size: usize, suspend: bool) -> Job {
        Self::start_with(size, suspend, demo_body)
    }

    pub fn start_with(size: usize, suspend: bool, body: fn(&mut CommContext)) -> Job {
        let mut hub = AgentHub::new(size);
        let mut records = Vec::new();
        let mut registries = Vec::new();
        for rank in 0..size {
            let registry = InspectRegistry::new();
            // Agents refuse port 0, so borrow an ephemeral port and retry if
            // something grabs it in between.
            let agent = loop {
                let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
                let opts = AgentOptions {
                    suspend_on_start: suspend,
                    bind: "127.0.0.1".parse().unwrap(),
                    ..AgentOptions::listen(port)
                };
                match start_agent(&opts, rank, size, registry.clone()) {
                    Ok(a) => break a,
                    Err(AgentError::AddressInUse { .. }) => continue,
                    Err(e) => panic!("{e}"),
                }
            };
            records.push(ConfRecord {
                address: "127.0.0.1".into(),
                rank,
                debug_port: agent.port(),
            });
            hub.insert(rank, agent);
            registries.push(registry);
        }
        let hub = Arc::new(hub);
        let dispatch = Arc::new(Dispatch::new().with_debugger(hub.clone()));
        let ranks = Fabric::new(size)
            .contexts()
            .unwrap()
            .into_iter()
            .zip(registries)
            .map(|(ctx, registry)| {
                let (hub, dispatch) = (hub.clone(), dispatch.clone());
                let mut ctx = ctx.with_inspectables(registry);
                std::thread::Builder::new()
                    .name(format!("rank-{}", ctx.rank()))
                    .spawn(move || {
                        let rank = ctx.rank();
                        set_current_rank(Some(rank));
                        with_dispatch(dispatch, || {
                            body(&mut ctx);
                            ctx.finalize().unwrap();
                        });
                        hub.get(rank).unwrap().thread_exit(current_thread_key());
                    })
                    .unwrap()
            })
            .collect();
        Job {
            conf: ConfFile::new(records).unwrap(),
            hub,
            ranks,
        }
    }

    pub fn join(self) {
        for r in self.ranks {
            r.join().unwrap();
        }
    }
}

/// `main` calls `compute` once, then synchronizes. `iter` is inspectable.
pub fn demo_body(ctx: &mut CommContext) {
    let iter = Arc::new(AtomicU64::new(42));
    let seen = iter.clone();
    ctx.register_inspectable("iter", move || seen.load(Ordering::SeqCst).to_string())
        .unwrap();
    probe_scope("main", || {
        probe_scope("compute", || iter.fetch_add(0, Ordering::SeqCst));
        ctx.barrier().unwrap();
    });
}
