//! Relative overhead of a profiled run against a baseline run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mpx_core::bench::{overhead_report, read_results, render_overhead};

#[derive(Parser)]
#[command(about = "Prints overhead_pct = 100*(profiled-base)/base for every shared metric")]
struct Args {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    profiled: PathBuf,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = (|| -> Result<String, Box<dyn std::error::Error>> {
        let rows = overhead_report(&read_results(&args.base)?, &read_results(&args.profiled)?)?;
        let text = render_overhead(&rows);
        if let Some(out) = &args.out {
            std::fs::write(out, &text)?;
        }
        Ok(text)
    })();
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bench-overhead: {e}");
            ExitCode::FAILURE
        }
    }
}
