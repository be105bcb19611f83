use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use super::CommError;

pub const ENV_RANK: &str = "MPX_RANK";
pub const ENV_SIZE: &str = "MPX_SIZE";
pub const ENV_MODE: &str = "MPX_MODE";
pub const ENV_CONF: &str = "MPX_CONF";
pub const ENV_CONNECT_TIMEOUT: &str = "MPX_CONNECT_TIMEOUT_S";

pub const DEFAULT_CONNECT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Multicore,
    Cluster,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Multicore => "multicore",
            Mode::Cluster => "cluster",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multicore" => Ok(Mode::Multicore),
            "cluster" => Ok(Mode::Cluster),
            other => Err(format!("unknown mode {other:?} (expected multicore or cluster)")),
        }
    }
}

/// Rank bootstrap parameters, normally read from `MPX_*` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    /// Absent in a multicore launch, where the runtime starts every rank.
    pub rank: Option<usize>,
    pub size: usize,
    pub mode: Mode,
    pub conf: Option<PathBuf>,
    pub connect_timeout: Duration,
}

impl Environment {
    pub fn from_env() -> Result<Self, CommError> {
        Self::from_vars(std::env::vars())
    }

    pub fn from_vars<I, K, V>(vars: I) -> Result<Self, CommError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let vars: HashMap<String, String> = vars.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        let get = |k: &str| vars.get(k).map(|v| v.trim()).filter(|v| !v.is_empty());
        let config = |msg: String| CommError::Config(msg);

        let size: usize = get(ENV_SIZE)
            .ok_or_else(|| config(format!("{ENV_SIZE} is not set")))?
            .parse()
            .map_err(|e| config(format!("{ENV_SIZE}: {e}")))?;
        if size == 0 {
            return Err(config(format!("{ENV_SIZE} must be at least 1")));
        }
        let mode = match get(ENV_MODE) {
            Some(m) => m.parse().map_err(config)?,
            None => Mode::Multicore,
        };
        let rank = get(ENV_RANK)
            .map(|r| r.parse::<usize>().map_err(|e| config(format!("{ENV_RANK}: {e}"))))
            .transpose()?;
        if let Some(r) = rank {
            if r >= size {
                return Err(config(format!("{ENV_RANK}={r} out of range for size {size}")));
            }
        }
        let conf = get(ENV_CONF).map(PathBuf::from);
        if mode == Mode::Cluster {
            if rank.is_none() {
                return Err(config(format!("{ENV_RANK} is required in cluster mode")));
            }
            if conf.is_none() {
                return Err(config(format!("{ENV_CONF} is required in cluster mode")));
            }
        }
        let connect_timeout = match get(ENV_CONNECT_TIMEOUT) {
            Some(s) => Duration::from_secs_f64(
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v > 0.0)
                    .ok_or_else(|| config(format!("{ENV_CONNECT_TIMEOUT}: invalid value {s:?}")))?,
            ),
            None => DEFAULT_CONNECT_TIMEOUT,
        };
        Ok(Environment {
            rank,
            size,
            mode,
            conf,
            connect_timeout,
        })
    }

    pub fn singleton() -> Self {
        Environment {
            rank: Some(0),
            size: 1,
            mode: Mode::Multicore,
            conf: None,
            connect_timeout: DEFAULT_CONNECT_TIMEOUT,
        }
    }
}
