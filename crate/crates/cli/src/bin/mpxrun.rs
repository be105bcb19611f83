//! Starts a parallel program: `mpxrun -np N [options] -- PROGRAM [ARGS...]`.

use std::process::ExitCode;

use mpx_core::launcher::config::USAGE;
use mpx_core::launcher::spawn::stdio_sink;
use mpx_core::launcher::{launch, parse_cli};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty()
        || args
            .iter()
            .take_while(|a| *a != "--")
            .any(|a| a == "-h" || a == "--help")
    {
        println!("{USAGE}");
        return if args.is_empty() {
            ExitCode::from(2)
        } else {
            ExitCode::SUCCESS
        };
    }
    let config = match parse_cli(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("mpxrun: {e}");
            eprintln!("{USAGE}");
            return ExitCode::from(2);
        }
    };
    if config.debug() {
        eprintln!("mpxrun: debug endpoints written to {}", config.conf_path.display());
    }
    match launch(&config, stdio_sink()) {
        Ok(report) => {
            for line in report.summary_lines() {
                eprintln!("mpxrun: {line}");
            }
            ExitCode::from(report.exit_code().clamp(0, 255) as u8)
        }
        Err(e) => {
            eprintln!("mpxrun: {e}");
            ExitCode::FAILURE
        }
    }
}
