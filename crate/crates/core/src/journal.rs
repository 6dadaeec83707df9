//! Append-only JSON-lines run journal.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    inner: Mutex<(File, u64)>,
}

impl Journal {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let existing = std::fs::read_to_string(path)?.lines().count() as u64;
        Ok(Journal { path: path.to_path_buf(), inner: Mutex::new((file, existing)) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one event. Entries carry a sequence number and no wall-clock
    /// time so replayed runs produce identical journals.
    pub fn record<E: Serialize>(&self, kind: &str, event: &E) {
        let mut guard = self.inner.lock().expect("journal lock");
        let seq = guard.1;
        let line = json!({ "seq": seq, "kind": kind, "event": event });
        let mut text = line.to_string();
        text.push('\n');
        if let Err(e) = guard.0.write_all(text.as_bytes()) {
            tracing::error!(error = %e, path = %self.path.display(), "journal write failed");
            return;
        }
        guard.1 += 1;
    }

    pub fn read_all(path: &Path) -> std::io::Result<Vec<Value>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
            .collect()
    }
}
