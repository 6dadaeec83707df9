//! Project file tree owned by the development agent: template seeding,
//! filtering, the context buffer, edit application and file locking.

mod clean;
mod diff;
mod template;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

pub use clean::{clean_artifact_text, escape_entities, has_artifacts, unescape_entities};
pub use diff::{
    apply_hunks, parse_unified_diff, validate_hunks, ContextMismatch, DiffHunk, DiffLine,
    DiffParseError, LineTag,
};
pub use template::{
    ReadinessProbe, TemplateDescriptor, TemplateStore, DEFAULT_FILTER_RULES, FILES_DIR, MANIFEST_FILE,
};

use crate::journal::Journal;

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("template {0:?} not found in the template store")]
    TemplateNotFound(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("destination {} is not empty", .0.display())]
    DestinationNotEmpty(PathBuf),
    #[error("path {0:?} escapes the workspace root")]
    PathEscape(String),
    #[error("{path} is locked; modification skipped")]
    LockedFileSkipped { path: RelPath },
    #[error("diff for {path} does not apply: {mismatch}")]
    DiffContextMismatch { path: RelPath, mismatch: ContextMismatch },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("context buffer is empty")]
    EmptyBuffer,
    #[error("{path} is not in the workspace")]
    UnknownPath { path: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl WorkspaceError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        WorkspaceError::Io { path: path.to_path_buf(), source }
    }
}

/// Normalized workspace-relative path: `/`-separated, no leading `./`, no
/// parent components, never absolute.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RelPath(String);

impl RelPath {
    pub fn new(raw: &str) -> Result<Self, WorkspaceError> {
        let unified = raw.trim().replace('\\', "/");
        if unified.is_empty() || unified.starts_with('/') || unified.contains('\0') {
            return Err(WorkspaceError::PathEscape(raw.to_string()));
        }
        let mut parts = Vec::new();
        for component in Path::new(&unified).components() {
            match component {
                Component::Normal(p) => parts.push(p.to_string_lossy().into_owned()),
                Component::CurDir => {}
                _ => return Err(WorkspaceError::PathEscape(raw.to_string())),
            }
        }
        if parts.is_empty() {
            return Err(WorkspaceError::PathEscape(raw.to_string()));
        }
        Ok(RelPath(parts.join("/")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for RelPath {
    type Error = WorkspaceError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        RelPath::new(&value)
    }
}

impl From<RelPath> for String {
    fn from(p: RelPath) -> String {
        p.0
    }
}

impl fmt::Display for RelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FileAction {
    Create { path: RelPath, content: String },
    FullReplace { path: RelPath, content: String },
    Diff { path: RelPath, hunks: Vec<DiffHunk> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Create,
    FullReplace,
    Diff,
}

impl FileAction {
    pub fn path(&self) -> &RelPath {
        match self {
            FileAction::Create { path, .. }
            | FileAction::FullReplace { path, .. }
            | FileAction::Diff { path, .. } => path,
        }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            FileAction::Create { .. } => ActionKind::Create,
            FileAction::FullReplace { .. } => ActionKind::FullReplace,
            FileAction::Diff { .. } => ActionKind::Diff,
        }
    }

    pub fn validate(&self) -> Result<(), WorkspaceError> {
        if let FileAction::Diff { hunks, .. } = self {
            validate_hunks(hunks).map_err(WorkspaceError::InvalidAction)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyResult {
    pub path: RelPath,
    /// What actually happened; a full replace of a missing file is a create.
    pub kind: ActionKind,
    pub bytes_written: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferedFile {
    pub path: RelPath,
    pub content: String,
    pub line_count: usize,
}

impl BufferedFile {
    fn new(path: RelPath, content: String) -> Self {
        let line_count = diff::split_lines(&content).0.len();
        BufferedFile { path, content, line_count }
    }
}

fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Directories never indexed: dependency trees and VCS metadata.
const UNINDEXED_DIRS: &[&str] = &["node_modules", ".git"];

/// Read-only view of a workspace for test instances.
#[derive(Debug, Clone)]
pub struct WorkspaceSnapshot {
    pub root: PathBuf,
    pub template: TemplateDescriptor,
    pub tree_hash: String,
}

#[derive(Debug, Clone)]
pub struct WorkspaceState {
    root: PathBuf,
    template: TemplateDescriptor,
    files: BTreeMap<RelPath, String>,
    locked: BTreeSet<RelPath>,
    buffer: Vec<BufferedFile>,
    chat_summary: String,
    journal: Option<Arc<Journal>>,
}

impl WorkspaceState {
    /// Copy the template's seed files into `dest` and index them.
    pub fn init_from_template(template: &TemplateDescriptor, dest: &Path) -> Result<Self, WorkspaceError> {
        template.validate()?;
        if !template.source_dir.is_dir() {
            return Err(WorkspaceError::TemplateNotFound(template.id.clone()));
        }
        if dest.exists() {
            let mut entries = std::fs::read_dir(dest).map_err(|e| WorkspaceError::io(dest, e))?;
            if entries.next().is_some() {
                return Err(WorkspaceError::DestinationNotEmpty(dest.to_path_buf()));
            }
        }
        std::fs::create_dir_all(dest).map_err(|e| WorkspaceError::io(dest, e))?;
        copy_tree(&template.source_dir, dest)?;
        let mut ws = Self::open(template.clone(), dest)?;
        for p in &template.protected {
            ws.locked.insert(RelPath::new(p)?);
        }
        Ok(ws)
    }

    /// Attach to an existing directory without copying anything.
    pub fn open(template: TemplateDescriptor, root: &Path) -> Result<Self, WorkspaceError> {
        let root = root.canonicalize().map_err(|e| WorkspaceError::io(root, e))?;
        let mut ws = WorkspaceState {
            root,
            template,
            files: BTreeMap::new(),
            locked: BTreeSet::new(),
            buffer: Vec::new(),
            chat_summary: String::new(),
            journal: None,
        };
        ws.reindex()?;
        Ok(ws)
    }

    pub fn with_journal(mut self, journal: Arc<Journal>) -> Self {
        self.journal = Some(journal);
        self
    }

    /// Rebuild the file index from disk.
    pub fn reindex(&mut self) -> Result<(), WorkspaceError> {
        let mut files = BTreeMap::new();
        let walker = walkdir::WalkDir::new(&self.root)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| {
                !(e.file_type().is_dir() && UNINDEXED_DIRS.iter().any(|d| e.file_name() == *d))
            });
        for entry in walker {
            let entry = entry.map_err(|e| WorkspaceError::Io {
                path: self.root.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry
                .path()
                .strip_prefix(&self.root)
                .expect("walk stays under root")
                .to_string_lossy()
                .into_owned();
            let bytes = std::fs::read(entry.path()).map_err(|e| WorkspaceError::io(entry.path(), e))?;
            files.insert(RelPath::new(&rel)?, hash_bytes(&bytes));
        }
        self.files = files;
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn template(&self) -> &TemplateDescriptor {
        &self.template
    }

    pub fn file_index(&self) -> &BTreeMap<RelPath, String> {
        &self.files
    }

    pub fn locked(&self) -> &BTreeSet<RelPath> {
        &self.locked
    }

    pub fn lock(&mut self, path: &str) -> Result<(), WorkspaceError> {
        self.locked.insert(RelPath::new(path)?);
        Ok(())
    }

    pub fn buffer(&self) -> &[BufferedFile] {
        &self.buffer
    }

    pub fn chat_summary(&self) -> &str {
        &self.chat_summary
    }

    pub fn set_chat_summary(&mut self, summary: String) {
        self.chat_summary = summary;
    }

    pub fn contains(&self, path: &RelPath) -> bool {
        self.files.contains_key(path)
    }

    /// Index minus every path matching the template's filter rules, in
    /// lexicographic order.
    pub fn filter_files(&self) -> Vec<RelPath> {
        let set = self.template.filter_set().unwrap_or_else(|e| {
            warn!(error = %e, "invalid filter rules, nothing filtered");
            globset::GlobSet::empty()
        });
        self.files
            .keys()
            .filter(|p| !set.is_match(p.as_str()))
            .cloned()
            .collect()
    }

    fn abs(&self, path: &RelPath) -> PathBuf {
        self.root.join(path.as_str())
    }

    pub fn read(&self, path: &RelPath) -> Result<String, WorkspaceError> {
        let abs = self.abs(path);
        let bytes = std::fs::read(&abs).map_err(|e| WorkspaceError::io(&abs, e))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Load `path` into the context buffer (or refresh its snapshot).
    pub fn load_into_buffer(&mut self, path: &RelPath) -> Result<(), WorkspaceError> {
        if !self.files.contains_key(path) {
            return Err(WorkspaceError::UnknownPath { path: path.to_string() });
        }
        let content = self.read(path)?;
        let entry = BufferedFile::new(path.clone(), content);
        match self.buffer.iter_mut().find(|b| &b.path == path) {
            Some(slot) => *slot = entry,
            None => self.buffer.push(entry),
        }
        Ok(())
    }

    /// Returns whether the file was buffered.
    pub fn drop_from_buffer(&mut self, path: &RelPath) -> bool {
        let before = self.buffer.len();
        self.buffer.retain(|b| &b.path != path);
        before != self.buffer.len()
    }

    pub fn buffered_paths(&self) -> Vec<RelPath> {
        self.buffer.iter().map(|b| b.path.clone()).collect()
    }

    fn ensure_inside(&self, abs: &Path) -> Result<(), WorkspaceError> {
        // Walk up to the closest existing ancestor and make sure symlinks
        // do not lead outside the root.
        let mut probe = abs.parent();
        while let Some(dir) = probe {
            if dir.exists() {
                let real = dir.canonicalize().map_err(|e| WorkspaceError::io(dir, e))?;
                if !real.starts_with(&self.root) {
                    return Err(WorkspaceError::PathEscape(abs.display().to_string()));
                }
                break;
            }
            probe = dir.parent();
        }
        if abs.is_symlink() {
            let real = abs.canonicalize().map_err(|e| WorkspaceError::io(abs, e))?;
            if !real.starts_with(&self.root) {
                return Err(WorkspaceError::PathEscape(abs.display().to_string()));
            }
        }
        Ok(())
    }

    /// Apply one edit. Locked targets and non-matching diffs leave the file
    /// untouched.
    pub fn apply_action(&mut self, action: &FileAction) -> Result<ApplyResult, WorkspaceError> {
        action.validate()?;
        let path = action.path().clone();
        if self.locked.contains(&path) {
            self.journal_event("skipped", &path, "locked");
            return Err(WorkspaceError::LockedFileSkipped { path });
        }
        let abs = self.abs(&path);
        self.ensure_inside(&abs)?;
        let exists = abs.is_file();
        let (content, kind, warning) = match action {
            FileAction::Create { content, .. } if exists => {
                warn!(%path, "create on existing file treated as full replace");
                (content.clone(), ActionKind::FullReplace, Some("create on existing path treated as full replace".into()))
            }
            FileAction::Create { content, .. } => (content.clone(), ActionKind::Create, None),
            FileAction::FullReplace { content, .. } if !exists => (content.clone(), ActionKind::Create, None),
            FileAction::FullReplace { content, .. } => (content.clone(), ActionKind::FullReplace, None),
            FileAction::Diff { hunks, .. } => {
                let current = if exists { self.read(&path)? } else { String::new() };
                match apply_hunks(&current, hunks) {
                    Ok(next) => (next, ActionKind::Diff, None),
                    Err(mismatch) => {
                        self.journal_event("rejected", &path, &mismatch.to_string());
                        return Err(WorkspaceError::DiffContextMismatch { path, mismatch });
                    }
                }
            }
        };
        if let Some(parent) = abs.parent() {
            std::fs::create_dir_all(parent).map_err(|e| WorkspaceError::io(parent, e))?;
        }
        std::fs::write(&abs, content.as_bytes()).map_err(|e| WorkspaceError::io(&abs, e))?;
        self.files.insert(path.clone(), hash_bytes(content.as_bytes()));
        if let Some(slot) = self.buffer.iter_mut().find(|b| b.path == path) {
            *slot = BufferedFile::new(path.clone(), content.clone());
        }
        let result = ApplyResult { path, kind, bytes_written: content.len(), warning };
        if let Some(j) = &self.journal {
            j.record("action-applied", &result);
        }
        Ok(result)
    }

    fn journal_event(&self, outcome: &str, path: &RelPath, reason: &str) {
        if let Some(j) = &self.journal {
            j.record(
                "action-not-applied",
                &serde_json::json!({ "outcome": outcome, "path": path, "reason": reason }),
            );
        }
    }

    /// Context block listing each buffered file with 1-based line numbers.
    pub fn render_context(&self) -> Result<String, WorkspaceError> {
        if self.buffer.is_empty() {
            return Err(WorkspaceError::EmptyBuffer);
        }
        let mut out = String::from("<Context Buffer>\n");
        for file in &self.buffer {
            out.push_str(&format!("<file filePath=\"{}\">\n", file.path));
            out.push_str(&number_lines(&file.content));
            out.push_str("</file>\n");
        }
        out.push_str("</Context Buffer>");
        Ok(out)
    }

    /// Hash over (path, content hash) of every non-filtered file.
    pub fn tree_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for path in self.filter_files() {
            hasher.update(path.as_str().as_bytes());
            hasher.update([0]);
            hasher.update(self.files[&path].as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn snapshot(&self) -> WorkspaceSnapshot {
        WorkspaceSnapshot {
            root: self.root.clone(),
            template: self.template.clone(),
            tree_hash: self.tree_hash(),
        }
    }

    /// Copy every non-filtered file into `dest`.
    pub fn export_tree(&self, dest: &Path) -> Result<(), WorkspaceError> {
        for path in self.filter_files() {
            let target = dest.join(path.as_str());
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent).map_err(|e| WorkspaceError::io(parent, e))?;
            }
            std::fs::copy(self.abs(&path), &target).map_err(|e| WorkspaceError::io(&target, e))?;
        }
        Ok(())
    }
}

/// Minimum gutter width for line numbers.
pub const LINE_NUMBER_WIDTH: usize = 4;

/// Prefix every line with a right-aligned 1-based number and `| `. A final
/// newline does not produce an extra numbered line.
pub fn number_lines(content: &str) -> String {
    let (lines, _) = diff::split_lines(content);
    let width = LINE_NUMBER_WIDTH.max(lines.len().to_string().len());
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        out.push_str(&format!("{:>width$} | {line}\n", i + 1));
    }
    out
}

fn copy_tree(src: &Path, dest: &Path) -> Result<(), WorkspaceError> {
    for entry in walkdir::WalkDir::new(src).sort_by_file_name() {
        let entry = entry.map_err(|e| WorkspaceError::Io {
            path: src.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?;
        let rel = entry.path().strip_prefix(src).expect("walk stays under src");
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target).map_err(|e| WorkspaceError::io(&target, e))?;
        } else if entry.file_type().is_file() {
            std::fs::copy(entry.path(), &target).map_err(|e| WorkspaceError::io(&target, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn descriptor(dir: &Path, rules: &[&str]) -> TemplateDescriptor {
        TemplateDescriptor {
            id: "fixture".into(),
            description: "fixture".into(),
            launch_command: "true".into(),
            install_command: None,
            probe: ReadinessProbe::default(),
            filter_rules: rules.iter().map(|s| s.to_string()).collect(),
            protected: vec!["package.json".into()],
            env: BTreeMap::new(),
            source_dir: dir.to_path_buf(),
        }
    }

    fn seed(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (p, c) in files {
            let path = dir.path().join(p);
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(path, c).unwrap();
        }
        dir
    }

    fn six_files() -> tempfile::TempDir {
        seed(&[
            ("index.html", "<h1>hi</h1>\n"),
            ("package.json", "{}\n"),
            ("src/main.js", "console.log(1);\n"),
            ("src/style.css", "body{}\n"),
            ("dist/x.css", "x\n"),
            (".env", "SECRET=1\n"),
        ])
    }

    #[test]
    fn init_copies_and_locks() {
        let src = six_files();
        let dest = tempfile::tempdir().unwrap();
        let ws = WorkspaceState::init_from_template(&descriptor(src.path(), &[]), &dest.path().join("ws")).unwrap();
        assert_eq!(ws.file_index().len(), 6);
        assert!(ws.buffer().is_empty());
        assert_eq!(ws.chat_summary(), "");
        assert!(ws.locked().contains(&RelPath::new("package.json").unwrap()));
    }

    #[test]
    fn init_refuses_non_empty_destination() {
        let src = six_files();
        let dest = seed(&[("keep.txt", "x")]);
        assert!(matches!(
            WorkspaceState::init_from_template(&descriptor(src.path(), &[]), dest.path()),
            Err(WorkspaceError::DestinationNotEmpty(_))
        ));
    }

    #[test]
    fn filtering() {
        let src = six_files();
        let dest = tempfile::tempdir().unwrap();
        let rules: Vec<&str> = DEFAULT_FILTER_RULES.to_vec();
        let ws = WorkspaceState::init_from_template(&descriptor(src.path(), &rules), &dest.path().join("w")).unwrap();
        let listed: Vec<String> = ws.filter_files().into_iter().map(String::from).collect();
        assert_eq!(listed, ["index.html", "package.json", "src/main.js", "src/style.css"]);

        let ws2 = WorkspaceState::open(descriptor(src.path(), &[]), ws.root()).unwrap();
        let all: Vec<String> = ws2.filter_files().into_iter().map(String::from).collect();
        assert_eq!(all, [".env", "dist/x.css", "index.html", "package.json", "src/main.js", "src/style.css"]);

        let ws3 = WorkspaceState::open(descriptor(src.path(), &["dist/**"]), ws.root()).unwrap();
        assert!(!ws3.filter_files().iter().any(|p| p.as_str() == "dist/x.css"));
    }

    #[test]
    fn rel_path_normalization() {
        assert_eq!(RelPath::new("./src//a.js").unwrap().as_str(), "src/a.js");
        assert_eq!(RelPath::new("src\\b.js").unwrap().as_str(), "src/b.js");
        for bad in ["../x", "/etc/passwd", "a/../../b", "", ".", "a/.."] {
            assert!(RelPath::new(bad).is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn full_replace_semantics() {
        let ten: String = (1..=10).map(|i| format!("old {i}\n")).collect();
        let twelve: String = (1..=12).map(|i| format!("new {i}\n")).collect();
        let dir = seed(&[("a.txt", &ten)]);
        let mut ws = WorkspaceState::open(descriptor(dir.path(), &[]), dir.path()).unwrap();
        let path = RelPath::new("a.txt").unwrap();
        let res = ws
            .apply_action(&FileAction::FullReplace { path: path.clone(), content: twelve.clone() })
            .unwrap();
        assert_eq!(res.kind, ActionKind::FullReplace);
        assert_eq!(ws.read(&path).unwrap(), twelve);
        assert_eq!(ws.read(&path).unwrap().lines().count(), 12);
    }

    #[test]
    fn create_on_existing_is_full_replace_with_warning() {
        let dir = seed(&[("a.txt", "x\n")]);
        let mut ws = WorkspaceState::open(descriptor(dir.path(), &[]), dir.path()).unwrap();
        let res = ws
            .apply_action(&FileAction::Create { path: RelPath::new("a.txt").unwrap(), content: "y\n".into() })
            .unwrap();
        assert_eq!(res.kind, ActionKind::FullReplace);
        assert!(res.warning.is_some());
        let res = ws
            .apply_action(&FileAction::FullReplace { path: RelPath::new("new/b.txt").unwrap(), content: "z\n".into() })
            .unwrap();
        assert_eq!(res.kind, ActionKind::Create);
        assert!(ws.contains(&RelPath::new("new/b.txt").unwrap()));
    }

    #[test]
    fn empty_diff_is_invalid() {
        let dir = seed(&[("a.txt", "x\n")]);
        let mut ws = WorkspaceState::open(descriptor(dir.path(), &[]), dir.path()).unwrap();
        let err = ws
            .apply_action(&FileAction::Diff { path: RelPath::new("a.txt").unwrap(), hunks: vec![] })
            .unwrap_err();
        assert!(matches!(err, WorkspaceError::InvalidAction(_)));
    }

    #[test]
    fn locked_file_is_skipped_and_unchanged() {
        let dir = seed(&[("package.json", "{}\n")]);
        let mut ws = WorkspaceState::open(descriptor(dir.path(), &[]), dir.path()).unwrap();
        ws.lock("package.json").unwrap();
        let err = ws
            .apply_action(&FileAction::FullReplace { path: RelPath::new("package.json").unwrap(), content: "bad".into() })
            .unwrap_err();
        assert!(matches!(err, WorkspaceError::LockedFileSkipped { .. }));
        assert_eq!(std::fs::read_to_string(dir.path().join("package.json")).unwrap(), "{}\n");
    }

    #[test]
    fn diff_mismatch_leaves_file_untouched() {
        let dir = seed(&[("a.txt", "one\ntwo\n")]);
        let mut ws = WorkspaceState::open(descriptor(dir.path(), &[]), dir.path()).unwrap();
        let hunks = parse_unified_diff("@@ -1,1 +1,1 @@\n-uno\n+eins\n").unwrap();
        let err = ws.apply_action(&FileAction::Diff { path: RelPath::new("a.txt").unwrap(), hunks }).unwrap_err();
        assert!(matches!(err, WorkspaceError::DiffContextMismatch { .. }));
        assert_eq!(std::fs::read_to_string(dir.path().join("a.txt")).unwrap(), "one\ntwo\n");
    }

    #[cfg(unix)]
    #[test]
    fn symlinked_directory_cannot_escape() {
        let outside = tempfile::tempdir().unwrap();
        let dir = seed(&[("a.txt", "x\n")]);
        std::os::unix::fs::symlink(outside.path(), dir.path().join("link")).unwrap();
        let mut ws = WorkspaceState::open(descriptor(dir.path(), &[]), dir.path()).unwrap();
        let err = ws
            .apply_action(&FileAction::FullReplace { path: RelPath::new("link/evil.txt").unwrap(), content: "x".into() })
            .unwrap_err();
        assert!(matches!(err, WorkspaceError::PathEscape(_)));
        assert!(!outside.path().join("evil.txt").exists());
    }

    #[test]
    fn render_context_numbers_lines() {
        let dir = seed(&[("a.txt", "alpha\nbeta\n"), ("b.txt", "x")]);
        let mut ws = WorkspaceState::open(descriptor(dir.path(), &[]), dir.path()).unwrap();
        assert!(matches!(ws.render_context(), Err(WorkspaceError::EmptyBuffer)));
        ws.load_into_buffer(&RelPath::new("a.txt").unwrap()).unwrap();
        ws.load_into_buffer(&RelPath::new("b.txt").unwrap()).unwrap();
        let text = ws.render_context().unwrap();
        assert_eq!(
            text,
            "<Context Buffer>\n<file filePath=\"a.txt\">\n   1 | alpha\n   2 | beta\n</file>\n<file filePath=\"b.txt\">\n   1 | x\n</file>\n</Context Buffer>"
        );
        assert_eq!(ws.buffer()[0].line_count, 2);
        assert_eq!(ws.buffer()[0].content, "alpha\nbeta\n");
    }

    #[test]
    fn buffer_refreshes_after_edit() {
        let dir = seed(&[("a.txt", "one\n")]);
        let mut ws = WorkspaceState::open(descriptor(dir.path(), &[]), dir.path()).unwrap();
        let p = RelPath::new("a.txt").unwrap();
        ws.load_into_buffer(&p).unwrap();
        ws.apply_action(&FileAction::FullReplace { path: p.clone(), content: "two\nthree\n".into() }).unwrap();
        assert_eq!(ws.buffer()[0].content, "two\nthree\n");
        assert_eq!(ws.buffer()[0].line_count, 2);
    }
}
