//! Newline-delimited record/replay store for model replies.
//!
//! Each line is a self-contained JSON object holding one fingerprint and the
//! reply recorded for it. Repeated requests with the same fingerprint are
//! served in recorded order; once exhausted, the last recorded reply is
//! reused.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bundle::{Fingerprint, ModelReply};
use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    Record,
    Replay,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: Fingerprint,
    pub reply: ModelReply,
}

#[derive(Debug, Default)]
pub struct Cassette {
    entries: Vec<CassetteEntry>,
    by_fingerprint: HashMap<Fingerprint, Vec<usize>>,
    cursors: HashMap<Fingerprint, usize>,
    sink: Option<PathBuf>,
}

impl Cassette {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Load every record from `path`. Blank lines are ignored.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let file = File::open(path).map_err(|e| GatewayError::Cassette {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cassette = Cassette::default();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GatewayError::Cassette {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry =
                serde_json::from_str(&line).map_err(|e| GatewayError::Cassette {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", lineno + 1),
                })?;
            cassette.push(entry);
        }
        Ok(cassette)
    }

    /// Open for recording: existing records are kept and new ones appended.
    pub fn open_for_record(path: &Path) -> Result<Self, GatewayError> {
        let mut cassette = if path.exists() {
            Self::load(path)?
        } else {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| GatewayError::Cassette {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
            }
            File::create(path).map_err(|e| GatewayError::Cassette {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            Cassette::default()
        };
        cassette.sink = Some(path.to_path_buf());
        Ok(cassette)
    }

    fn push(&mut self, entry: CassetteEntry) {
        self.by_fingerprint
            .entry(entry.fingerprint.clone())
            .or_default()
            .push(self.entries.len());
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CassetteEntry] {
        &self.entries
    }

    pub fn contains(&self, fingerprint: &Fingerprint) -> bool {
        self.by_fingerprint.contains_key(fingerprint)
    }

    pub fn lookup(&mut self, fingerprint: &Fingerprint) -> Option<ModelReply> {
        let slots = self.by_fingerprint.get(fingerprint)?;
        let cursor = self.cursors.entry(fingerprint.clone()).or_insert(0);
        let idx = slots[(*cursor).min(slots.len() - 1)];
        *cursor += 1;
        Some(self.entries[idx].reply.clone())
    }

    pub fn append(&mut self, fingerprint: Fingerprint, reply: ModelReply) -> Result<(), GatewayError> {
        let entry = CassetteEntry { fingerprint, reply };
        if let Some(path) = &self.sink {
            let mut line = serde_json::to_string(&entry).expect("cassette entry serializes");
            line.push('\n');
            let mut file = OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| GatewayError::Cassette {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            file.write_all(line.as_bytes())
                .map_err(|e| GatewayError::Cassette {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
        }
        // Recorded replies are consumed already; keep the cursor past them.
        let fp = entry.fingerprint.clone();
        self.push(entry);
        *self.cursors.entry(fp).or_insert(0) += 1;
        Ok(())
    }
}
