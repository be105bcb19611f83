//! Launcher, interactive debugger and function-level profiler for
//! message-passing programs.
//!
//! A program links this crate, calls [`runtime::run`] with its per-rank body
//! and is started by `mpxrun`. Probes placed with [`probe_scope`] feed both
//! the debug agent (breakpoints, stepping) and the profiler.

pub mod bench;
pub mod clock;
pub mod debug_agent;
pub mod debug_client;
pub mod harness;
pub mod launcher;
pub mod mdwp;
pub mod prof;
pub mod profiler;
pub mod runtime;

pub use harness::{probe_scope, CommContext, CommError, Environment, Fabric, Mode, ProbeKind};
pub use launcher::conf::{ConfFile, ConfRecord};
pub use launcher::placement::Placement;
pub use runtime::{run, try_run, BodyError};
