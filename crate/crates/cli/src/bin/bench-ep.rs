//! EP Monte Carlo kernel.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mpx_core::bench::{ep_kernel, write_results};
use mpx_core::profiler::ProfilerConfig;

#[derive(Parser)]
#[command(about = "EP kernel: counts 2^scale random pairs inside the unit circle")]
struct Args {
    #[arg(long, default_value_t = 20)]
    scale: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "ep.csv")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let profiled = matches!(ProfilerConfig::from_vars(std::env::vars()), Ok(Some(_)));
    mpx_core::run(|ctx| {
        if let Some(mut r) = ep_kernel(ctx, args.scale, args.seed)? {
            r.profiled = profiled;
            println!(
                "ep scale {} seed {} np {} checksum {} wall_s {:.6}",
                args.scale,
                args.seed,
                r.np,
                r.checksum.unwrap_or_default(),
                r.wall_s.unwrap_or_default()
            );
            write_results(&args.out, &[r])?;
        }
        Ok(())
    })
}
