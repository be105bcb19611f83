//! Ping-pong latency and bandwidth between ranks 0 and 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mpx_core::bench::{pingpong, write_results};
use mpx_core::profiler::ProfilerConfig;

#[derive(Parser)]
#[command(about = "Ping-pong benchmark; run with `mpxrun -np 2`")]
struct Args {
    /// Message sizes in bytes.
    #[arg(long, value_delimiter = ',', default_value = "1,1024,1048576")]
    sizes: Vec<usize>,
    /// Timed round trips per size; a tenth as many warm-up rounds run first.
    #[arg(long, default_value_t = 1000)]
    reps: u64,
    #[arg(long, default_value = "pingpong.csv")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let profiled = matches!(ProfilerConfig::from_vars(std::env::vars()), Ok(Some(_)));
    mpx_core::run(|ctx| {
        let mut rows = pingpong(ctx, &args.sizes, args.reps)?;
        if ctx.rank() == 0 {
            for r in &mut rows {
                r.profiled = profiled;
                println!(
                    "size {:>8}  latency_us {:>10.3}  bandwidth_mbps {:>10.3}",
                    r.size,
                    r.latency_us.unwrap_or_default(),
                    r.bandwidth_mbps.unwrap_or_default()
                );
            }
            write_results(&args.out, &rows)?;
        }
        Ok(())
    })
}
