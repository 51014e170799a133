//! Append-only session journals: one JSON document per line, the first
//! being the session config, then one line per ballot or undo.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use awaire_core::engine::{AuditConfig, AuditState, EngineError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EXTENSION: &str = "jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Entry {
    Config { id: String, created: u64, config: AuditConfig },
    Ballot { ranking: Vec<String> },
    Undo,
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: {source}")]
    Replay { path: PathBuf, line: usize, source: EngineError },
}

pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Creates a new journal whose first line is the config; fails if the
    /// file already exists.
    pub fn create(dir: &Path, id: &str, created: u64, config: &AuditConfig) -> io::Result<Journal> {
        let path = dir.join(format!("{id}.{EXTENSION}"));
        let file = OpenOptions::new().append(true).create_new(true).open(&path)?;
        let mut journal = Journal { path, file };
        journal.append(&Entry::Config { id: id.to_string(), created, config: config.clone() })?;
        Ok(journal)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one entry and syncs it to disk.
    pub fn append(&mut self, entry: &Entry) -> io::Result<()> {
        let mut line = serde_json::to_string(entry).map_err(io::Error::other)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()
    }
}

/// A session rebuilt from its journal.
pub struct Recovered {
    pub id: String,
    pub created: u64,
    pub state: AuditState,
    pub journal: Journal,
}

/// Replays a journal. A final line without its newline is a write cut
/// short by a crash: it is dropped and truncated away.
pub fn recover(path: &Path) -> Result<Recovered, JournalError> {
    let io_err = |source| JournalError::Io { path: path.to_path_buf(), source };
    let corrupt = |line, message: String| JournalError::Corrupt { path: path.to_path_buf(), line, message };
    let mut reader = BufReader::new(File::open(path).map_err(io_err)?);

    let mut header: Option<(String, u64)> = None;
    let mut state: Option<AuditState> = None;
    let mut committed = 0u64;
    let mut buf = String::new();
    let mut lineno = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err)?;
        if n == 0 {
            break;
        }
        lineno += 1;
        if !buf.ends_with('\n') {
            log::warn!("{}: dropping incomplete final line {lineno}", path.display());
            break;
        }
        let entry: Entry = serde_json::from_str(buf.trim_end()).map_err(|e| corrupt(lineno, e.to_string()))?;
        let replay = |source| JournalError::Replay { path: path.to_path_buf(), line: lineno, source };
        match entry {
            Entry::Config { id, created, config } => {
                if state.is_some() {
                    return Err(corrupt(lineno, "repeated config line".into()));
                }
                state = Some(AuditState::new(config).map_err(replay)?);
                header = Some((id, created));
            }
            op => {
                let s = state.as_mut().ok_or_else(|| corrupt(lineno, "first line is not a config".into()))?;
                match op {
                    Entry::Ballot { ranking } => {
                        let r = s.ranking_from_names(&ranking).map_err(replay)?;
                        s.process_ballot(&r).map_err(replay)?;
                    }
                    Entry::Undo => {
                        s.undo_last().map_err(replay)?;
                    }
                    Entry::Config { .. } => unreachable!(),
                }
            }
        }
        committed += n as u64;
    }
    let (Some((id, created)), Some(state)) = (header, state) else {
        return Err(corrupt(0, "journal has no config line".into()));
    };
    let file = OpenOptions::new().append(true).open(path).map_err(io_err)?;
    if file.metadata().map_err(io_err)?.len() != committed {
        file.set_len(committed).map_err(io_err)?;
    }
    Ok(Recovered { id, created, state, journal: Journal { path: path.to_path_buf(), file } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use awaire_core::alpha::AlphaParams;
    use awaire_core::weights::SchemeSpec;

    fn config() -> AuditConfig {
        let names = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        AuditConfig::new(names, 0, 50, 0.05, SchemeSpec::Largest, AlphaParams::recommended_default())
    }

    #[test]
    fn round_trip_with_undo() {
        let dir = tempfile::tempdir().unwrap();
        let mut j = Journal::create(dir.path(), "s1", 7, &config()).unwrap();
        for r in [vec!["A"], vec!["B", "A"], vec![]] {
            j.append(&Entry::Ballot { ranking: r.into_iter().map(String::from).collect() }).unwrap();
        }
        j.append(&Entry::Undo).unwrap();
        let rec = recover(j.path()).unwrap();
        assert_eq!((rec.id.as_str(), rec.created), ("s1", 7));
        assert_eq!(rec.state.draws_seen(), 2);
        assert!(Journal::create(dir.path(), "s1", 7, &config()).is_err());
    }

    #[test]
    fn torn_final_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let mut j = Journal::create(dir.path(), "s", 0, &config()).unwrap();
        j.append(&Entry::Ballot { ranking: vec!["A".into()] }).unwrap();
        let path = j.path().to_path_buf();
        drop(j);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"op\":\"ballot\",\"rank").unwrap();
        drop(f);
        let mut rec = recover(&path).unwrap();
        assert_eq!(rec.state.draws_seen(), 1);
        rec.journal.append(&Entry::Undo).unwrap();
        assert_eq!(recover(&path).unwrap().state.draws_seen(), 0);
    }

    #[test]
    fn bad_first_line_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(&path, "{\"op\":\"undo\"}\n").unwrap();
        assert!(matches!(recover(&path), Err(JournalError::Corrupt { line: 1, .. })));
    }
}
