//! Append-only event log with periodic per-session snapshots.
//!
//! `events.jsonl` holds one [`LogEvent`] per line. `snapshot.json` holds every
//! session together with the number of its own log events already folded in,
//! so recovery loads the snapshot and replays only the later lines.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use deanchor_core::schema;
use deanchor_core::session::{apply_event, LiveStudy, LogEvent, Session};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const SNAPSHOT_KIND: &str = "session_snapshot";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    /// Log events of this session reflected in `session`.
    pub events: u64,
    pub session: Session,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub sessions: Vec<SnapshotEntry>,
}

/// Sessions rebuilt from disk, with their event counts.
pub type Recovered = BTreeMap<String, SnapshotEntry>;

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    log: Mutex<File>,
}

impl Store {
    /// Opens (creating if needed) the state directory and rebuilds every session.
    pub fn open(dir: &Path, study: &LiveStudy) -> Result<(Self, Recovered), StoreError> {
        fs::create_dir_all(dir).map_err(io(dir))?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let mut recovered: Recovered = BTreeMap::new();
        if snap_path.exists() {
            let text = fs::read_to_string(&snap_path).map_err(io(&snap_path))?;
            let snap: Snapshot = schema::from_document(SNAPSHOT_KIND, &text).map_err(|e| StoreError::Corrupt {
                path: snap_path.clone(),
                message: e.to_string(),
            })?;
            for e in snap.sessions {
                recovered.insert(e.session.id.clone(), e);
            }
        }
        let log_path = dir.join(LOG_FILE);
        let mut seen: BTreeMap<String, u64> = BTreeMap::new();
        if log_path.exists() {
            let text = fs::read_to_string(&log_path).map_err(io(&log_path))?;
            let complete = text.ends_with('\n');
            let lines: Vec<&str> = text.lines().collect();
            for (n, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let ev: LogEvent = match serde_json::from_str(line) {
                    Ok(ev) => ev,
                    // A torn final line from an interrupted write is dropped.
                    Err(e) if n + 1 == lines.len() && !complete => {
                        tracing::warn!("ignoring partial final log line: {e}");
                        break;
                    }
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            path: log_path.clone(),
                            message: format!("line {}: {e}", n + 1),
                        })
                    }
                };
                let id = ev.session().to_string();
                let count = seen.entry(id.clone()).or_default();
                *count += 1;
                if recovered.get(&id).is_some_and(|e| e.events >= *count) {
                    continue;
                }
                let mut table: BTreeMap<String, Session> = recovered
                    .remove(&id)
                    .map(|e| (id.clone(), e.session))
                    .into_iter()
                    .collect();
                apply_event(study, &mut table, &ev).map_err(|e| StoreError::Corrupt {
                    path: log_path.clone(),
                    message: format!("line {}: replay failed: {e}", n + 1),
                })?;
                if let Some(session) = table.remove(&id) {
                    recovered.insert(id, SnapshotEntry { events: *count, session });
                }
            }
            if !complete && !text.is_empty() {
                // Cut the torn tail so later appends start on a fresh line.
                let keep = text.rfind('\n').map_or(0, |i| i + 1) as u64;
                let f = OpenOptions::new().write(true).open(&log_path).map_err(io(&log_path))?;
                f.set_len(keep).map_err(io(&log_path))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io(&log_path))?;
        Ok((
            Self {
                dir: dir.to_path_buf(),
                log: Mutex::new(file),
            },
            recovered,
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends events as whole lines in a single write.
    pub fn append(&self, events: &[LogEvent]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let text: String = events.iter().map(LogEvent::to_line).collect();
        let path = self.dir.join(LOG_FILE);
        let mut f = self.log.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(text.as_bytes()).map_err(io(&path))?;
        f.flush().map_err(io(&path))
    }

    /// Replaces the snapshot atomically.
    pub fn write_snapshot(&self, snapshot: &Snapshot) -> Result<(), StoreError> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let text = schema::to_document(SNAPSHOT_KIND, snapshot).map_err(|e| StoreError::Corrupt {
            path: path.clone(),
            message: e.to_string(),
        })?;
        fs::write(&tmp, text).map_err(io(&tmp))?;
        fs::rename(&tmp, &path).map_err(io(&path))
    }
}
