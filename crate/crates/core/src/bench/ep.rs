//! EP-style Monte Carlo kernel.
//!
//! Pair `k` of the global stream uses the LCG states `x0·a^(2k+1)` and
//! `x0·a^(2k+2)` (mod 2^46), so every rank can jump straight to its first
//! pair and the total count does not depend on how pairs are split.

use std::time::Instant;

use super::{BenchError, BenchResult};
use crate::harness::{probe_scope, CommContext};

pub const MULTIPLIER: u64 = 1_220_703_125; // 5^13
pub const MODULUS_BITS: u32 = 46;
const MASK: u64 = (1 << MODULUS_BITS) - 1;
const EP_TAG: i32 = 0x4550;
pub const MIN_SCALE: u32 = 10;
pub const MAX_SCALE: u32 = 40;

fn mulmod(a: u64, b: u64) -> u64 {
    ((a as u128 * b as u128) as u64) & MASK
}

fn powmod(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mulmod(acc, base);
        }
        base = mulmod(base, base);
        exp >>= 1;
    }
    acc
}

/// Initial state for `seed`; always odd so the stream has full period.
pub fn initial_state(seed: u64) -> u64 {
    (seed.wrapping_mul(2).wrapping_add(1)) & MASK
}

/// Inside-circle count for global pairs `start..end`.
pub fn count_pairs(seed: u64, start: u64, end: u64) -> u64 {
    let mut x = mulmod(initial_state(seed), powmod(MULTIPLIER, 2 * start));
    let half = 1i128 << MODULUS_BITS;
    let limit = half * half;
    let mut count = 0;
    for _ in start..end {
        x = mulmod(x, MULTIPLIER);
        let u = 2 * x as i128 - half;
        x = mulmod(x, MULTIPLIER);
        let v = 2 * x as i128 - half;
        // (u/2^46)^2 + (v/2^46)^2 <= 1, in integers.
        if u * u + v * v <= limit {
            count += 1;
        }
    }
    count
}

/// Pairs `[start, end)` owned by `rank` out of `total`.
pub fn share(total: u64, rank: usize, size: usize) -> (u64, u64) {
    let (r, n) = (rank as u128, size as u128);
    let t = total as u128;
    ((t * r / n) as u64, (t * (r + 1) / n) as u64)
}

fn check_scale(scale: u32) -> Result<(), BenchError> {
    if scale < MIN_SCALE {
        return Err(BenchError::Usage(format!(
            "scale {scale} is below {MIN_SCALE}; timings would be meaningless"
        )));
    }
    if scale > MAX_SCALE {
        return Err(BenchError::Usage(format!("scale {scale} exceeds {MAX_SCALE}")));
    }
    Ok(())
}

/// Runs the kernel on every rank. Rank 0 gathers the partial counts and
/// returns the result; other ranks return `None`.
pub fn ep_kernel(ctx: &mut CommContext, scale: u32, seed: u64) -> Result<Option<BenchResult>, BenchError> {
    check_scale(scale)?;
    let (rank, size) = (ctx.rank(), ctx.size());
    ctx.barrier()?;
    let started = Instant::now();
    let (start, end) = share(1 << scale, rank, size);
    let local = probe_scope("generate", || count_pairs(seed, start, end));
    let total = probe_scope("reduce", || -> Result<Option<u64>, BenchError> {
        if rank == 0 {
            let mut total = local;
            for src in 1..size {
                let bytes = ctx.recv(src as i32, EP_TAG)?;
                let arr: [u8; 8] = bytes
                    .as_slice()
                    .try_into()
                    .map_err(|_| BenchError::Protocol(format!("rank {src} sent {} bytes", bytes.len())))?;
                total += u64::from_be_bytes(arr);
            }
            Ok(Some(total))
        } else {
            ctx.send(0, EP_TAG, &local.to_be_bytes())?;
            Ok(None)
        }
    })?;
    let wall_s = started.elapsed().as_secs_f64();
    Ok(total.map(|checksum| BenchResult {
        benchmark: "ep".into(),
        size: scale as u64,
        reps: 1,
        np: size as u32,
        seed: Some(seed),
        wall_s: Some(wall_s),
        checksum: Some(checksum),
        ..BenchResult::default()
    }))
}
