//! Small ring program used for debugger and profiler walkthroughs.
//!
//! Each rank computes a value, passes it to the next rank and waits for its
//! predecessor's. `iter` is registered for INSPECT.

use std::process::ExitCode;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use mpx_core::{probe_scope, BodyError, CommContext};

const RING_TAG: i32 = 1;

fn compute(rank: usize) -> u64 {
    (1..=10_000u64).fold(rank as u64, |acc, i| acc.wrapping_mul(31).wrapping_add(i ^ rank as u64))
}

fn body(ctx: &mut CommContext) -> Result<(), BodyError> {
    probe_scope("main", || {
        let iter = Arc::new(AtomicU64::new(42));
        let shown = iter.clone();
        ctx.register_inspectable("iter", move || shown.load(Ordering::Relaxed).to_string())?;
        probe_scope("setup", || iter.store(42, Ordering::Relaxed));
        let (rank, size) = (ctx.rank() as i32, ctx.size() as i32);
        let value = probe_scope("compute", || compute(ctx.rank()));
        let mut received = value;
        if size > 1 {
            ctx.send((rank + 1) % size, RING_TAG, &value.to_be_bytes())?;
            let bytes = ctx.recv((rank - 1 + size) % size, RING_TAG)?;
            received = u64::from_be_bytes(bytes.as_slice().try_into()?);
        }
        ctx.barrier()?;
        println!("rank {rank}: value {value:016x} received {received:016x}");
        Ok(())
    })
}

fn main() -> ExitCode {
    mpx_core::run(body)
}
