//! Append-only access log, optionally mirrored to a JSON-lines file.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::engine::json::canonical_json;

const SYNC_EVERY: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initiator {
    AppQuery,
    Schedule,
    Install,
    Console,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    DeniedConstraint,
    DeniedRevoked,
    Error,
    Previewed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessLogEntry {
    pub timestamp: DateTime<Utc>,
    pub initiator: Initiator,
    pub grant_id: String,
    pub manifest_hash: String,
    pub action_type: ActionType,
    pub outcome: Outcome,
    pub records_out: usize,
    pub bytes_out: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogFilter {
    #[serde(default)]
    pub grant_id: Option<String>,
    #[serde(default)]
    pub since: Option<DateTime<Utc>>,
    #[serde(default)]
    pub outcome: Option<Outcome>,
}

impl LogFilter {
    fn matches(&self, e: &AccessLogEntry) -> bool {
        self.grant_id.as_ref().is_none_or(|g| *g == e.grant_id)
            && self.since.is_none_or(|s| e.timestamp >= s)
            && self.outcome.is_none_or(|o| o == e.outcome)
    }
}

#[derive(Default)]
pub struct AccessLog {
    entries: Vec<AccessLogEntry>,
    last_per_grant: HashMap<String, DateTime<Utc>>,
    file: Option<File>,
    unsynced: usize,
}

impl AccessLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens `path`, replaying existing lines, and appends from there.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut log = Self::default();
        if let Ok(f) = File::open(path) {
            for line in BufReader::new(f).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: AccessLogEntry = serde_json::from_str(&line)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                log.remember(entry);
            }
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        log.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(log)
    }

    fn remember(&mut self, entry: AccessLogEntry) {
        self.last_per_grant
            .insert(entry.grant_id.clone(), entry.timestamp);
        self.entries.push(entry);
    }

    /// Appends `entry`. A timestamp earlier than the grant's previous entry
    /// is raised to it so per-grant order stays monotone.
    pub fn append(&mut self, mut entry: AccessLogEntry) -> std::io::Result<()> {
        if let Some(last) = self.last_per_grant.get(&entry.grant_id) {
            entry.timestamp = entry.timestamp.max(*last);
        }
        if let Some(f) = &mut self.file {
            let value = serde_json::to_value(&entry).expect("log entries serialize");
            let mut line = canonical_json(&value);
            line.push('\n');
            f.write_all(line.as_bytes())?;
            self.unsynced += 1;
            if self.unsynced >= SYNC_EVERY {
                f.sync_data()?;
                self.unsynced = 0;
            }
        }
        self.remember(entry);
        Ok(())
    }

    pub fn sync(&mut self) -> std::io::Result<()> {
        if let Some(f) = &mut self.file {
            f.sync_data()?;
        }
        self.unsynced = 0;
        Ok(())
    }

    /// Matching entries ordered by timestamp (ties keep append order).
    pub fn query(&self, filter: &LogFilter) -> Vec<AccessLogEntry> {
        let mut out: Vec<AccessLogEntry> = self
            .entries
            .iter()
            .filter(|e| filter.matches(e))
            .cloned()
            .collect();
        out.sort_by_key(|e| e.timestamp);
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Drop for AccessLog {
    fn drop(&mut self) {
        let _ = self.sync();
    }
}
