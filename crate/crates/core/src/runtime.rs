//! Entry point for programs started by `mpxrun`.
//!
//! [`run`] reads the launcher's environment, creates one context per local
//! rank (all ranks as threads in multicore mode, one rank in cluster mode),
//! starts debug agents and the profiler when requested, runs the body on
//! every rank, finalizes and writes profiles.

use std::process::ExitCode;
use std::sync::Arc;

use crate::debug_agent::{start_agent, AgentHub, AgentOptions, ENV_DEBUG_PORT, ENV_DEBUG_SUSPEND};
use crate::harness::probe::{current_thread_key, set_current_rank, set_global_dispatch, Dispatch};
use crate::harness::{self, env, CommContext, Environment, Fabric, InspectRegistry, Mode};
use crate::launcher::conf::ConfFile;
use crate::profiler::{self, Profiler};

pub type BodyError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
#[error("{}{message}", rank.map(|r| format!("rank {r}: ")).unwrap_or_default())]
pub struct RuntimeError {
    pub rank: Option<usize>,
    pub message: String,
}

fn rt_err(rank: Option<usize>, e: impl ToString) -> RuntimeError {
    RuntimeError {
        rank,
        message: e.to_string(),
    }
}

fn environment() -> Result<Environment, RuntimeError> {
    if std::env::var_os(env::ENV_SIZE).is_none() {
        return Ok(Environment::singleton());
    }
    Environment::from_env().map_err(|e| rt_err(None, e))
}

fn debug_port(env: &Environment, rank: usize) -> Result<Option<u16>, RuntimeError> {
    let Some(base) = std::env::var(ENV_DEBUG_PORT).ok().filter(|v| !v.trim().is_empty()) else {
        return Ok(None);
    };
    let base: u16 = base
        .trim()
        .parse()
        .map_err(|_| rt_err(Some(rank), format!("{ENV_DEBUG_PORT}: invalid port {base:?}")))?;
    if env.mode == Mode::Cluster {
        return Ok(Some(base));
    }
    if let Some(conf) = env.conf.as_ref().and_then(|p| ConfFile::read(p).ok()) {
        if let Some(r) = conf.record(rank) {
            return Ok(Some(r.debug_port));
        }
    }
    u16::try_from(base as usize + 2 * rank)
        .map(Some)
        .map_err(|_| rt_err(Some(rank), format!("debug port {base} + 2*{rank} out of range")))
}

fn contexts(env: &Environment) -> Result<Vec<CommContext>, RuntimeError> {
    match env.mode {
        Mode::Multicore if env.rank.is_none() => Fabric::new(env.size).contexts().map_err(|e| rt_err(None, e)),
        _ => Ok(vec![harness::init(env).map_err(|e| rt_err(env.rank, e))?]),
    }
}

fn local_ranks(env: &Environment) -> Vec<usize> {
    match env.rank {
        Some(r) => vec![r],
        None => (0..env.size).collect(),
    }
}

type Registries = Vec<(usize, Arc<InspectRegistry>)>;

// Agents start before any data port opens: a rank whose debug port is taken
// must fail before peers can connect to it and wait on it forever.
fn start_agents(env: &Environment) -> Result<(Option<AgentHub>, Registries), RuntimeError> {
    let suspend = std::env::var(ENV_DEBUG_SUSPEND).is_ok_and(|v| v.trim() == "1");
    let mut hub = AgentHub::new(env.size);
    let mut registries = Vec::new();
    for rank in local_ranks(env) {
        let Some(port) = debug_port(env, rank)? else { continue };
        let opts = AgentOptions {
            suspend_on_start: suspend,
            ..AgentOptions::listen(port)
        };
        let registry = InspectRegistry::new();
        let agent = start_agent(&opts, rank, env.size, registry.clone()).map_err(|e| rt_err(Some(rank), e))?;
        hub.insert(rank, agent);
        registries.push((rank, registry));
    }
    let hub = (!registries.is_empty()).then_some(hub);
    Ok((hub, registries))
}

fn run_rank<F>(mut ctx: CommContext, body: &F, hub: Option<&AgentHub>) -> Result<(), RuntimeError>
where
    F: Fn(&mut CommContext) -> Result<(), BodyError>,
{
    let rank = ctx.rank();
    set_current_rank(Some(rank));
    let result = body(&mut ctx).map_err(|e| rt_err(Some(rank), e));
    let result = result.and_then(|()| {
        if ctx.is_finalized() {
            Ok(())
        } else {
            ctx.finalize().map_err(|e| rt_err(Some(rank), e))
        }
    });
    if let Some(agent) = hub.and_then(|h| h.get(rank)) {
        agent.thread_exit(current_thread_key());
    }
    drop(ctx);
    set_current_rank(None);
    result
}

/// Runs `body` once per local rank. Returns after every rank has finished
/// and profiles are written.
pub fn try_run<F>(body: F) -> Result<(), RuntimeError>
where
    F: Fn(&mut CommContext) -> Result<(), BodyError> + Send + Sync,
{
    let env = environment()?;
    let profiler = profiler::enable_from_env().map_err(|e| rt_err(env.rank, e))?;
    let (hub, registries) = start_agents(&env)?;
    let hub = hub.map(Arc::new);
    let ctxs: Vec<CommContext> = contexts(&env)?
        .into_iter()
        .map(|c| match registries.iter().find(|(r, _)| *r == c.rank()) {
            Some((_, reg)) => c.with_inspectables(reg.clone()),
            None => c,
        })
        .collect();
    let mut dispatch = Dispatch::new();
    if let Some(h) = &hub {
        dispatch = dispatch.with_debugger(h.clone());
    }
    if profiler.is_enabled() {
        dispatch = dispatch.with_profiler(Arc::new(profiler.clone()));
    }
    if !dispatch.is_empty() {
        set_global_dispatch(dispatch);
    }
    let hub_ref = hub.as_deref();
    let results: Vec<Result<(), RuntimeError>> = if ctxs.len() == 1 && env.mode == Mode::Cluster {
        ctxs.into_iter().map(|c| run_rank(c, &body, hub_ref)).collect()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = ctxs
                .into_iter()
                .map(|c| {
                    let rank = c.rank();
                    let body = &body;
                    std::thread::Builder::new()
                        .name(format!("rank-{rank}"))
                        .spawn_scoped(s, move || run_rank(c, body, hub_ref))
                        .map(|h| (rank, h))
                        .map_err(|e| rt_err(Some(rank), e))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    let (rank, h) = h?;
                    h.join().unwrap_or_else(|_| Err(rt_err(Some(rank), "panicked")))
                })
                .collect()
        })
    };
    let flushed = flush(&profiler, env.rank);
    let mut errors: Vec<RuntimeError> = results.into_iter().filter_map(Result::err).collect();
    if let Err(e) = flushed {
        errors.push(e);
    }
    // The first failing rank is the interesting one; the rest usually
    // failed because a peer went away.
    match errors.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn flush(profiler: &Profiler, rank: Option<usize>) -> Result<(), RuntimeError> {
    profiler.flush().map(|_| ()).map_err(|e| rt_err(rank, e))
}

/// [`try_run`] for `main`: reports failures on stderr as
/// `[mpx] rank N: <message>` and turns them into exit code 1.
pub fn run<F>(body: F) -> ExitCode
where
    F: Fn(&mut CommContext) -> Result<(), BodyError> + Send + Sync,
{
    match try_run(body) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("[mpx] {e}");
            ExitCode::FAILURE
        }
    }
}
