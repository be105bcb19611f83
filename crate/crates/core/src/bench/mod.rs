//! Ping-pong and EP benchmarks, CSV result files and the relative-overhead
//! report.

pub mod ep;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use ep::ep_kernel;

use crate::harness::{CommContext, CommError};

const PINGPONG_TAG: i32 = 0x5050;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("{}: {source}", path.display())]
    Csv {
        path: std::path::PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("cannot compare: {0}")]
    Mismatch(String),
}

/// One row of a result file. `size` is the message size in bytes for
/// ping-pong and the problem scale for EP.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchResult {
    pub benchmark: String,
    pub size: u64,
    pub reps: u64,
    pub np: u32,
    pub profiled: bool,
    pub seed: Option<u64>,
    pub median_rtt_us: Option<f64>,
    pub latency_us: Option<f64>,
    pub bandwidth_mbps: Option<f64>,
    pub wall_s: Option<f64>,
    pub checksum: Option<u64>,
}

impl BenchResult {
    fn metrics(&self) -> Vec<(&'static str, f64)> {
        [
            ("median_rtt_us", self.median_rtt_us),
            ("latency_us", self.latency_us),
            ("bandwidth_mbps", self.bandwidth_mbps),
            ("wall_s", self.wall_s),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

pub fn write_results(path: impl AsRef<Path>, rows: &[BenchResult]) -> Result<(), BenchError> {
    let path = path.as_ref();
    let err = |source| BenchError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| err(e.into()))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<BenchResult>, BenchError> {
    let path = path.as_ref();
    let err = |source| BenchError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().map(|row| row.map_err(err)).collect()
}

pub fn median(samples: &mut [f64]) -> f64 {
    assert!(!samples.is_empty(), "median of no samples");
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2.0
    }
}

pub fn warmup_rounds(reps: u64) -> u64 {
    reps.div_ceil(10)
}

/// Round-trip times in µs for `reps` exchanges of `size` bytes, after
/// warmup. Rank 0 returns the samples, rank 1 returns an empty vector.
pub fn pingpong_samples(ctx: &mut CommContext, size: usize, reps: u64) -> Result<Vec<f64>, BenchError> {
    let payload = vec![0xa5u8; size];
    let mut samples = Vec::with_capacity(reps as usize);
    for i in 0..warmup_rounds(reps) + reps {
        if ctx.rank() == 0 {
            let t0 = Instant::now();
            ctx.send(1, PINGPONG_TAG, &payload)?;
            let back = ctx.recv(1, PINGPONG_TAG)?;
            let rtt = t0.elapsed().as_secs_f64() * 1e6;
            if back.len() != size {
                return Err(BenchError::Protocol(format!(
                    "echo of {} bytes, sent {size}",
                    back.len()
                )));
            }
            if i >= warmup_rounds(reps) {
                samples.push(rtt);
            }
        } else {
            let msg = ctx.recv(0, PINGPONG_TAG)?;
            ctx.send(0, PINGPONG_TAG, &msg)?;
        }
    }
    Ok(samples)
}

/// Ping-pong between ranks 0 and 1. Rank 0 returns one row per size.
pub fn pingpong(ctx: &mut CommContext, sizes: &[usize], reps: u64) -> Result<Vec<BenchResult>, BenchError> {
    if ctx.size() != 2 {
        return Err(BenchError::Usage(format!(
            "pingpong needs exactly 2 ranks, got {}",
            ctx.size()
        )));
    }
    if reps == 0 {
        return Err(BenchError::Usage("reps must be at least 1".into()));
    }
    let mut out = Vec::new();
    for &size in sizes {
        let mut samples = pingpong_samples(ctx, size, reps)?;
        if ctx.rank() != 0 {
            continue;
        }
        let rtt = median(&mut samples).max(f64::MIN_POSITIVE);
        out.push(BenchResult {
            benchmark: "pingpong".into(),
            size: size as u64,
            reps,
            np: 2,
            median_rtt_us: Some(rtt),
            latency_us: Some(rtt / 2.0),
            // bits per µs is Mbit/s
            bandwidth_mbps: Some(size as f64 * 8.0 * 2.0 / rtt),
            ..BenchResult::default()
        });
    }
    Ok(out)
}

pub fn overhead_pct(base: f64, profiled: f64) -> f64 {
    100.0 * (profiled - base) / base
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverheadRow {
    pub benchmark: String,
    pub size: u64,
    pub metric: &'static str,
    pub base: f64,
    pub profiled: f64,
    pub overhead_pct: f64,
}

/// Pairs rows by (benchmark, size) and computes the relative overhead of
/// every metric both sides report. Negative overheads are kept as measured.
pub fn overhead_report(base: &[BenchResult], profiled: &[BenchResult]) -> Result<Vec<OverheadRow>, BenchError> {
    let key = |r: &BenchResult| (r.benchmark.clone(), r.size, r.reps, r.np, r.seed);
    let mut bk: Vec<_> = base.iter().map(key).collect();
    let mut pk: Vec<_> = profiled.iter().map(key).collect();
    bk.sort();
    pk.sort();
    if bk != pk {
        return Err(BenchError::Mismatch(format!(
            "parameters differ: base {bk:?} vs profiled {pk:?}"
        )));
    }
    if bk.is_empty() {
        return Err(BenchError::Mismatch("no rows".into()));
    }
    let mut out = Vec::new();
    for b in base {
        let p = profiled.iter().find(|p| key(p) == key(b)).expect("keys match");
        if b.profiled && !p.profiled {
            return Err(BenchError::Mismatch(format!(
                "{} size {}: base run is profiled and profiled run is not",
                b.benchmark, b.size
            )));
        }
        if let (Some(x), Some(y)) = (b.checksum, p.checksum) {
            if x != y {
                return Err(BenchError::Mismatch(format!(
                    "{} size {}: checksums differ ({x} vs {y})",
                    b.benchmark, b.size
                )));
            }
        }
        let pm = p.metrics();
        for (metric, bv) in b.metrics() {
            if let Some(&(_, pv)) = pm.iter().find(|(m, _)| *m == metric) {
                out.push(OverheadRow {
                    benchmark: b.benchmark.clone(),
                    size: b.size,
                    metric,
                    base: bv,
                    profiled: pv,
                    overhead_pct: overhead_pct(bv, pv),
                });
            }
        }
    }
    Ok(out)
}

pub fn render_overhead(rows: &[OverheadRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["benchmark", "size", "metric", "base", "profiled", "overhead_pct"])
        .unwrap();
    for r in rows {
        w.write_record([
            r.benchmark.clone(),
            r.size.to_string(),
            r.metric.to_string(),
            r.base.to_string(),
            r.profiled.to_string(),
            format!("{:.1}", r.overhead_pct),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}
