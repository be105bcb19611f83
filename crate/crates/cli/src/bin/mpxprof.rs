//! Reports, validation and trace merging over a profile directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mpx_core::prof::{self, merge, Format, ReportOptions, Scope, SortKey, Units};

#[derive(Parser)]
#[command(name = "mpxprof", about = "Profile reports for mpxrun -profile output")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print statistics tables.
    Report {
        dir: PathBuf,
        #[arg(long, default_value = "per-thread")]
        scope: Scope,
        #[arg(long, default_value = "excl")]
        sort: SortKey,
        #[arg(long, default_value = "us")]
        units: Units,
        #[arg(long, default_value = "table")]
        format: Format,
    },
    /// Check every profile for inconsistent numbers.
    Validate { dir: PathBuf },
    /// Merge trace files into one timeline.
    Merge {
        dir: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool, prof::ProfError> {
    match cli.command {
        Cmd::Report {
            dir,
            scope,
            sort,
            units,
            format,
        } => {
            let set = prof::load_profiles(&dir)?;
            let opts = ReportOptions {
                scope,
                sort,
                units,
                format,
            };
            print!("{}", prof::render(&prof::aggregate(&set, scope, sort)?, &opts));
            Ok(true)
        }
        Cmd::Validate { dir } => {
            let set = prof::load_profiles(&dir)?;
            let violations = prof::validate(&set);
            for v in &violations {
                println!("{v}");
            }
            if violations.is_empty() {
                println!("{} profiles ok", set.len());
            }
            Ok(violations.is_empty())
        }
        Cmd::Merge { dir, out } => {
            let events = prof::merge_traces(&dir)?;
            std::fs::write(&out, merge::encode(&events)).map_err(|source| prof::ProfError::Io {
                path: out.clone(),
                source,
            })?;
            eprintln!("mpxprof: {} events written to {}", events.len(), out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("mpxprof: {e}");
            ExitCode::from(2)
        }
    }
}
