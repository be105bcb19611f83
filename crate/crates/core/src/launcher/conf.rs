//! `mpjdev.conf`: one `<address> <rank> <debug_port>` record per rank.

use std::fmt::Write as _;
use std::path::Path;

use super::LaunchError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfRecord {
    /// Host name or IP address of the node running the rank.
    pub address: String,
    pub rank: usize,
    pub debug_port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfFile {
    pub records: Vec<ConfRecord>,
}

impl ConfFile {
    /// Builds a conf file; records are reordered by rank and must cover
    /// ranks `0..n` exactly once.
    pub fn new(mut records: Vec<ConfRecord>) -> Result<Self, LaunchError> {
        records.sort_by_key(|r| r.rank);
        for (i, r) in records.iter().enumerate() {
            if r.rank != i {
                return Err(LaunchError::Conf(format!(
                    "ranks must cover 0..{} exactly once (found rank {} at position {i})",
                    records.len(),
                    r.rank
                )));
            }
            if r.address.is_empty() || r.address.contains(char::is_whitespace) {
                return Err(LaunchError::Conf(format!(
                    "rank {}: invalid address {:?}",
                    r.rank, r.address
                )));
            }
        }
        Ok(ConfFile { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, rank: usize) -> Option<&ConfRecord> {
        self.records.get(rank)
    }

    /// LF-separated records in rank order, no trailing newline.
    pub fn encode(&self) -> String {
        let mut out = String::new();
        for (i, r) in self.records.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            write!(out, "{} {} {}", r.address, r.rank, r.debug_port).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LaunchError> {
        let mut records = Vec::new();
        for (n, line) in text.split('\n').enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| LaunchError::Conf(format!("line {}: {what}: {line:?}", n + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [address, rank, port] = fields[..] else {
                return Err(bad("expected `<address> <rank> <debug_port>`"));
            };
            records.push(ConfRecord {
                address: address.to_string(),
                rank: rank.parse().map_err(|_| bad("invalid rank"))?,
                debug_port: port.parse().map_err(|_| bad("invalid port"))?,
            });
        }
        ConfFile::new(records)
    }

    pub fn read(path: &Path) -> Result<Self, LaunchError> {
        let text = std::fs::read_to_string(path).map_err(|e| LaunchError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    /// Writes through a temporary file and rename, so readers never see a
    /// partial file.
    pub fn write(&self, path: &Path) -> Result<(), LaunchError> {
        let io = |e| LaunchError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(format!(".tmp{}", std::process::id()));
        let tmp = std::path::PathBuf::from(tmp);
        std::fs::write(&tmp, self.encode()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            io(e)
        })
    }
}
