//! Offline tooling over profile and trace directories: loading, reports,
//! validation and trace merging.

pub mod merge;
pub mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

pub use merge::{merge_traces, MergedEvent};
pub use report::{aggregate, render, AggRow, Format, ReportOptions, Scope, SortKey, Table, Units};

use crate::profiler::format::{parse_file_name, FileKind, ProfileData, ProfileIdentity};
use crate::profiler::ROOT_NAME;

#[derive(Debug, thiserror::Error)]
pub enum ProfError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Report(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProfileSet {
    pub dir: PathBuf,
    pub entries: BTreeMap<ProfileIdentity, ProfileData>,
}

impl ProfileSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Files in `dir` whose names match `<kind>.<node>.<context>.<thread>`,
/// ordered by identity.
pub(crate) fn matching_files(dir: &Path, want: FileKind) -> Result<Vec<(ProfileIdentity, PathBuf)>, ProfError> {
    let io = |source| ProfError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let Some(name) = entry.file_name().to_str().map(str::to_string) else {
            continue;
        };
        if let Some((kind, id)) = parse_file_name(&name) {
            if kind == want && entry.path().is_file() {
                out.push((id, entry.path()));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub(crate) fn read_text(path: &Path) -> Result<String, ProfError> {
    std::fs::read_to_string(path).map_err(|source| ProfError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_profiles(dir: impl AsRef<Path>) -> Result<ProfileSet, ProfError> {
    let dir = dir.as_ref();
    let mut entries = BTreeMap::new();
    for (id, path) in matching_files(dir, FileKind::Profile)? {
        let data = ProfileData::parse(&read_text(&path)?).map_err(|e| ProfError::Parse {
            path: path.clone(),
            line: e.line,
            message: e.message,
        })?;
        entries.insert(id, data);
    }
    Ok(ProfileSet {
        dir: dir.to_path_buf(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub identity: ProfileIdentity,
    pub function: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.function {
            Some(func) => write!(f, "{} {:?}: {}", self.identity, func, self.message),
            None => write!(f, "{}: {}", self.identity, self.message),
        }
    }
}

pub fn validate(set: &ProfileSet) -> Vec<Violation> {
    let mut out = Vec::new();
    for (id, data) in &set.entries {
        let mut push = |function: Option<&str>, message: String| {
            out.push(Violation {
                identity: *id,
                function: function.map(str::to_string),
                message,
            })
        };
        for c in &data.comments {
            if let Some(m) = c.strip_prefix("invalid: ") {
                push(None, format!("profiler reported unbalanced events: {m}"));
            }
        }
        for f in &data.functions {
            for (field, v) in [
                ("calls", f.calls),
                ("subrs", f.subrs),
                ("excl", f.excl_us),
                ("incl", f.incl_us),
            ] {
                if v < 0 {
                    push(Some(&f.name), format!("negative {field} {v}"));
                }
            }
            if f.incl_us < f.excl_us {
                push(
                    Some(&f.name),
                    format!("inclusive {} < exclusive {}", f.incl_us, f.excl_us),
                );
            }
        }
        if data.functions.is_empty() {
            continue;
        }
        match data.get(ROOT_NAME) {
            None => push(None, format!("missing {ROOT_NAME} row")),
            Some(root) => {
                let sum: i128 = data.functions.iter().map(|f| f.excl_us as i128).sum();
                if sum != root.incl_us as i128 {
                    push(
                        None,
                        format!("sum of exclusive times {sum} != {ROOT_NAME} inclusive {}", root.incl_us),
                    );
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiler::format::FunctionStats;

    fn f(name: &str, calls: i64, subrs: i64, excl: i64, incl: i64) -> FunctionStats {
        FunctionStats {
            name: name.into(),
            calls,
            subrs,
            excl_us: excl,
            incl_us: incl,
        }
    }

    fn clean() -> ProfileData {
        ProfileData {
            functions: vec![f(ROOT_NAME, 1, 1, 0, 10), f("main", 1, 1, 5, 10), f("a", 1, 0, 5, 5)],
            comments: vec![],
        }
    }

    #[test]
    fn discovery_ignores_other_names() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["profile.0.0.0", "profile.1.0.0"] {
            std::fs::write(dir.path().join(name), clean().encode()).unwrap();
        }
        for name in ["profile.0.0.x", "notes.txt", "trace.0.0.0", "profile.0.0"] {
            std::fs::write(dir.path().join(name), "garbage").unwrap();
        }
        let set = load_profiles(dir.path()).unwrap();
        let ids: Vec<_> = set.entries.keys().map(|k| k.to_string()).collect();
        assert_eq!(ids, ["0.0.0", "1.0.0"]);
    }

    #[test]
    fn truncated_file_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let text = clean().encode();
        let truncated = text.trim_end_matches("0 aggregates\n");
        std::fs::write(dir.path().join("profile.0.0.3"), truncated).unwrap();
        let err = load_profiles(dir.path()).unwrap_err().to_string();
        assert!(err.contains("profile.0.0.3:5:"), "{err}");
    }

    #[test]
    fn validate_clean_and_vacuous() {
        let mut set = ProfileSet::default();
        set.entries.insert(ProfileIdentity::new(0, 0), clean());
        set.entries.insert(ProfileIdentity::new(1, 0), ProfileData::default());
        assert!(validate(&set).is_empty());
    }

    #[test]
    fn validate_flags_injected_faults() {
        let mut bad = clean();
        bad.functions[2].incl_us = 4;
        let mut set = ProfileSet::default();
        set.entries.insert(ProfileIdentity::new(2, 0), bad);
        let v = validate(&set);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].identity, ProfileIdentity::new(2, 0));
        assert_eq!(v[0].function.as_deref(), Some("a"));

        let mut bad = clean();
        bad.functions[1].excl_us = 6;
        bad.functions[2].calls = -1;
        set.entries.insert(ProfileIdentity::new(2, 0), bad);
        let msgs: Vec<_> = validate(&set).iter().map(|v| v.to_string()).collect();
        assert_eq!(msgs.len(), 2, "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("negative calls")));
        assert!(msgs.iter().any(|m| m.contains("sum of exclusive times 11")));

        let mut bad = clean();
        bad.functions.remove(0);
        set.entries.insert(ProfileIdentity::new(2, 0), bad);
        assert!(validate(&set)[0].message.contains("missing"));
    }
}
