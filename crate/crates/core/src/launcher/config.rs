use std::path::{Path, PathBuf};

use super::LaunchError;
use crate::harness::Mode;

pub const USAGE: &str = "usage: mpxrun -np N [-dev multicore|cluster] [-machines FILE] [-debug PORT] [-suspend] \
[-profile] [-trace] [-profdir DIR] [-conf FILE] [-remote TEMPLATE] [--env K=V]... -- PROGRAM [ARGS...]";

pub const DEFAULT_CONF: &str = "mpjdev.conf";

#[derive(Debug, Clone, PartialEq)]
pub struct LaunchConfig {
    pub np: usize,
    pub mode: Mode,
    /// Node addresses in machines-file order. Multicore runs use `127.0.0.1`.
    pub machines: Vec<String>,
    /// Enables debug mode when set.
    pub debug_port_base: Option<u16>,
    /// Agents hold every rank thread at its first probe until a client resumes it.
    pub suspend_on_start: bool,
    pub profile: bool,
    pub trace: bool,
    pub profile_dir: PathBuf,
    pub conf_path: PathBuf,
    /// Remote execution prefix for cluster ranks, e.g. `ssh {host}`. Local exec when unset.
    pub remote_exec: Option<String>,
    pub program: Vec<String>,
    pub extra_env: Vec<(String, String)>,
}

impl LaunchConfig {
    pub fn new(np: usize, program: Vec<String>) -> Self {
        LaunchConfig {
            np,
            mode: Mode::Multicore,
            machines: vec!["127.0.0.1".into()],
            debug_port_base: None,
            suspend_on_start: false,
            profile: false,
            trace: false,
            profile_dir: PathBuf::from("."),
            conf_path: PathBuf::from(DEFAULT_CONF),
            remote_exec: None,
            program,
            extra_env: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), LaunchError> {
        let usage = |m: String| Err(LaunchError::Usage(m));
        if self.np < 1 {
            return usage("-np must be at least 1".into());
        }
        if self.program.is_empty() {
            return usage("missing program after --".into());
        }
        if self.machines.is_empty() {
            return usage("cluster mode requires a non-empty -machines file".into());
        }
        if let Some(base) = self.debug_port_base {
            let max = 65535usize.saturating_sub(2 * self.np);
            if (base as usize) < 1024 || base as usize > max {
                return usage(format!(
                    "-debug port {base} must lie in [1024, {max}] for -np {}",
                    self.np
                ));
            }
        }
        Ok(())
    }

    pub fn debug(&self) -> bool {
        self.debug_port_base.is_some()
    }
}

/// Reads a machines file: one address per line, `#` comments and blank lines ignored.
pub fn read_machines(path: &Path) -> Result<Vec<String>, LaunchError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LaunchError::Usage(format!("cannot read machines file {}: {e}", path.display())))?;
    Ok(parse_machines(&text))
}

pub fn parse_machines(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parses `mpxrun` arguments (without the program name).
pub fn parse_cli<S: AsRef<str>>(args: &[S]) -> Result<LaunchConfig, LaunchError> {
    let usage = |m: String| LaunchError::Usage(m);
    let mut np: Option<usize> = None;
    let mut mode = Mode::Multicore;
    let mut machines_file: Option<PathBuf> = None;
    let mut cfg = LaunchConfig::new(0, Vec::new());

    let mut it = args.iter().map(AsRef::as_ref);
    let value = |flag: &str, it: &mut dyn Iterator<Item = &str>| {
        it.next()
            .map(str::to_string)
            .ok_or_else(|| usage(format!("{flag} needs a value")))
    };
    while let Some(arg) = it.next() {
        match arg {
            "-np" => {
                let v = value(arg, &mut it)?;
                np = Some(v.parse().map_err(|_| usage(format!("-np: not a number: {v:?}")))?);
            }
            "-dev" => mode = value(arg, &mut it)?.parse().map_err(usage)?,
            "-machines" => machines_file = Some(PathBuf::from(value(arg, &mut it)?)),
            "-debug" => {
                let v = value(arg, &mut it)?;
                cfg.debug_port_base = Some(v.parse().map_err(|_| usage(format!("-debug: invalid port {v:?}")))?);
            }
            "-suspend" => cfg.suspend_on_start = true,
            "-profile" => cfg.profile = true,
            "-trace" => cfg.trace = true,
            "-profdir" => cfg.profile_dir = PathBuf::from(value(arg, &mut it)?),
            "-conf" => cfg.conf_path = PathBuf::from(value(arg, &mut it)?),
            "-remote" => cfg.remote_exec = Some(value(arg, &mut it)?),
            "--env" => {
                let kv = value(arg, &mut it)?;
                let (k, v) = kv
                    .split_once('=')
                    .filter(|(k, _)| !k.is_empty())
                    .ok_or_else(|| usage(format!("--env expects K=V, got {kv:?}")))?;
                cfg.extra_env.push((k.to_string(), v.to_string()));
            }
            "--" => {
                cfg.program = it.by_ref().map(str::to_string).collect();
                break;
            }
            other => return Err(usage(format!("unknown flag {other:?}"))),
        }
    }

    cfg.np = np.ok_or_else(|| usage("-np is required".into()))?;
    cfg.mode = mode;
    if cfg.trace {
        cfg.profile = true;
    }
    cfg.machines = match (mode, machines_file) {
        (Mode::Cluster, None) => return Err(usage("cluster mode requires -machines FILE".into())),
        (Mode::Cluster, Some(path)) => read_machines(&path)?,
        (Mode::Multicore, _) => vec!["127.0.0.1".into()],
    };
    cfg.validate()?;
    Ok(cfg)
}
