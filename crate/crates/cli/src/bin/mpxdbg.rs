//! Debugger front end: `mpxdbg -conf mpjdev.conf [--script FILE] [--gateway PORT]`.
//!
//! Without `--script` it reads commands from stdin (`all: CMD`,
//! `rank N: CMD`, `wait-hits K`, `wait-exit`, `quit`) and prints agent
//! events as they arrive.

use std::io::BufRead;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use mpx_core::debug_client::script::parse_step;
use mpx_core::debug_client::{
    parse_script, run_script, serve_gateway, AttachOptions, GatewayOptions, ScriptOptions, Session, Step, Target,
};
use mpx_core::launcher::config::DEFAULT_CONF;
use mpx_core::ConfFile;

const USAGE: &str = "usage: mpxdbg -conf FILE [--script FILE] [--gateway PORT] [--assets DIR] \
[--connect-timeout SECS] [--wait-timeout SECS]";

struct Args {
    conf: PathBuf,
    script: Option<PathBuf>,
    gateway: Option<u16>,
    assets: Option<PathBuf>,
    connect_timeout: Duration,
    wait_timeout: Duration,
}

fn parse_args(args: &[String]) -> Result<Args, String> {
    let mut out = Args {
        conf: PathBuf::from(DEFAULT_CONF),
        script: None,
        gateway: None,
        assets: None,
        connect_timeout: Duration::from_secs(10),
        wait_timeout: Duration::from_secs(30),
    };
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let mut value = || it.next().cloned().ok_or_else(|| format!("{flag} needs a value"));
        let secs = |v: String| {
            v.parse::<f64>()
                .ok()
                .filter(|s| *s > 0.0)
                .map(Duration::from_secs_f64)
                .ok_or_else(|| format!("{flag}: bad duration {v:?}"))
        };
        match flag.as_str() {
            "-conf" | "--conf" => out.conf = value()?.into(),
            "--script" => out.script = Some(value()?.into()),
            "--gateway" => {
                let v = value()?;
                out.gateway = Some(v.parse().map_err(|_| format!("--gateway: bad port {v:?}"))?);
            }
            "--assets" => out.assets = Some(value()?.into()),
            "--connect-timeout" => out.connect_timeout = secs(value()?)?,
            "--wait-timeout" => out.wait_timeout = secs(value()?)?,
            other => return Err(format!("unknown argument {other:?}")),
        }
    }
    Ok(out)
}

fn repl(session: &Session, wait_timeout: Duration) {
    let rx = session.subscribe();
    std::thread::spawn(move || {
        let mut rx = rx;
        while let Ok(ev) = rx.blocking_recv() {
            if !matches!(
                ev.kind.as_str(),
                "STATE" | "THREAD_GONE" | "BREAK" | "CLEAR" | "DISCONNECT"
            ) {
                println!("rank {} < {}", ev.rank, ev.line());
            } else if ev.kind == "DISCONNECT" {
                println!("rank {} disconnected", ev.rank);
            }
        }
    });
    for line in std::io::stdin().lock().lines() {
        let Ok(line) = line else { break };
        let line = line.trim();
        if line == "quit" || line == "exit" {
            break;
        }
        let step = match parse_step(line) {
            Ok(Some(s)) => s,
            Ok(None) => continue,
            Err(e) => {
                println!("error: {e}");
                continue;
            }
        };
        match &step {
            Step::WaitHits(k) => match session.wait_hits(*k, wait_timeout) {
                Ok(()) => println!("wait-hits {k}: ok"),
                Err(e) => println!("wait-hits {k}: {e}"),
            },
            Step::WaitExit => match session.wait_exit(wait_timeout) {
                Ok(()) => println!("wait-exit: ok"),
                Err(e) => println!("wait-exit: {e}"),
            },
            Step::Send(target, cmd) => {
                let results = match target {
                    Target::All => session.broadcast(cmd),
                    Target::Rank(r) => [(*r, session.send(*r, cmd))].into_iter().collect(),
                };
                for (rank, res) in results {
                    match res {
                        Ok(reply) => reply.lines.iter().for_each(|l| println!("rank {rank} < {l}")),
                        Err(e) => println!("rank {rank} ! {e}"),
                    }
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.iter().any(|a| a == "-h" || a == "--help") {
        println!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    let args = match parse_args(&argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("mpxdbg: {e}\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    let conf = match ConfFile::read(&args.conf) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("mpxdbg: {e}");
            return ExitCode::from(2);
        }
    };
    let steps = match args.script.as_ref().map(|p| {
        std::fs::read_to_string(p)
            .map_err(|e| format!("{}: {e}", p.display()))
            .and_then(|t| parse_script(&t).map_err(|e| format!("{}: {e}", p.display())))
    }) {
        Some(Err(e)) => {
            eprintln!("mpxdbg: {e}");
            return ExitCode::from(2);
        }
        Some(Ok(s)) => Some(s),
        None => None,
    };
    let opts = AttachOptions {
        connect_window: args.connect_timeout,
        ..AttachOptions::default()
    };
    let session = match Session::attach(&conf, opts) {
        Ok(s) => Arc::new(s),
        Err(e) => {
            eprintln!("mpxdbg: {e}");
            return ExitCode::FAILURE;
        }
    };
    let gateway = match args.gateway {
        Some(port) => {
            let gopts = GatewayOptions {
                port,
                bind_all: false,
                assets: args.assets.clone(),
            };
            match serve_gateway(session.clone(), &gopts) {
                Ok(g) => {
                    eprintln!("mpxdbg: gateway listening on http://{}", g.local_addr());
                    Some(g)
                }
                Err(e) => {
                    eprintln!("mpxdbg: {e}");
                    return ExitCode::FAILURE;
                }
            }
        }
        None => None,
    };
    let code = match steps {
        Some(steps) => {
            let sopts = ScriptOptions {
                wait_timeout: args.wait_timeout,
            };
            match run_script(&session, &steps, sopts) {
                Ok(t) => {
                    print!("{t}");
                    ExitCode::SUCCESS
                }
                Err(f) => {
                    print!("{}", f.transcript);
                    eprintln!("mpxdbg: script failed: {}", f.error);
                    ExitCode::FAILURE
                }
            }
        }
        None => {
            repl(&session, args.wait_timeout);
            if gateway.is_some() {
                // stdin closed; keep serving until the program is gone.
                while session.wait_exit(Duration::from_secs(3600)).is_err() {}
            }
            ExitCode::SUCCESS
        }
    };
    drop(gateway);
    session.close();
    code
}
