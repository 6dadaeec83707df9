use std::path::{Path, PathBuf};

use proptest::prelude::*;
use webtdd_core::workspace::{DiffHunk, DiffLine, FileAction, RelPath, TemplateStore, WorkspaceError, WorkspaceState};

fn templates() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/templates")
}

fn fresh(dir: &Path) -> WorkspaceState {
    let store = TemplateStore::load(&templates()).unwrap();
    WorkspaceState::init_from_template(store.get("static-site").unwrap(), &dir.join("ws")).unwrap()
}

fn snapshot_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<(PathBuf, Vec<u8>)> = walkdir::WalkDir::new(root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().to_path_buf(), std::fs::read(e.path()).unwrap()))
        .collect();
    out.sort();
    out
}

fn path_piece() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("..".to_string()),
        Just(".".to_string()),
        Just("".to_string()),
        Just("/".to_string()),
        Just("\\".to_string()),
        Just("site.json".to_string()),
        "[a-z]{1,6}",
        "[a-z]{1,4}\\.[a-z]{2,3}",
    ]
}

fn raw_path() -> impl Strategy<Value = String> {
    (proptest::bool::ANY, proptest::collection::vec(path_piece(), 1..6)).prop_map(|(abs, parts)| {
        let joined = parts.join("/");
        if abs {
            format!("/{joined}")
        } else {
            joined
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Whatever path a model names, writes land inside the workspace root
    /// or are refused.
    #[test]
    fn writes_never_escape(raw in raw_path(), body in "[a-z\n]{0,20}") {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = fresh(dir.path());
        let outside_before = snapshot_bytes(dir.path());
        let Ok(path) = RelPath::new(&raw) else { return Ok(()) };
        prop_assert!(!path.as_str().starts_with('/'));
        prop_assert!(!path.as_str().split('/').any(|c| c == ".." || c.is_empty()));
        let _ = ws.apply_action(&FileAction::FullReplace { path, content: body });
        let root = ws.root().to_path_buf();
        for (p, bytes) in snapshot_bytes(dir.path()) {
            if !p.starts_with(&root) {
                prop_assert!(outside_before.contains(&(p, bytes)));
            }
        }
    }

    /// No sequence of edits changes a locked file.
    #[test]
    fn locked_files_are_inviolable(edits in proptest::collection::vec((0u8..3, "[a-z ]{0,12}"), 1..12)) {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = fresh(dir.path());
        let locked = RelPath::new("site.json").unwrap();
        prop_assert!(ws.locked().contains(&locked));
        let before = std::fs::read(ws.root().join("site.json")).unwrap();
        for (kind, text) in edits {
            let action = match kind {
                0 => FileAction::FullReplace { path: locked.clone(), content: text },
                1 => FileAction::Create { path: locked.clone(), content: text },
                _ => FileAction::Diff {
                    path: locked.clone(),
                    hunks: vec![DiffHunk::from_lines(0, 1, vec![DiffLine::add(text)])],
                },
            };
            let outcome = ws.apply_action(&action);
            prop_assert!(matches!(outcome, Err(WorkspaceError::LockedFileSkipped { .. })), "{:?}", outcome);
        }
        prop_assert_eq!(std::fs::read(ws.root().join("site.json")).unwrap(), before);
    }
}

#[test]
fn tree_hash_tracks_content_only() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut wa = fresh(a.path());
    let mut wb = fresh(b.path());
    assert_eq!(wa.tree_hash(), wb.tree_hash());
    let page = RelPath::new("about.html").unwrap();
    wa.apply_action(&FileAction::Create { path: page.clone(), content: "<h1>About</h1>\n".into() }).unwrap();
    assert_ne!(wa.tree_hash(), wb.tree_hash());
    wb.apply_action(&FileAction::FullReplace { path: page, content: "<h1>About</h1>\n".into() }).unwrap();
    assert_eq!(wa.tree_hash(), wb.tree_hash());
}

#[test]
fn rejected_diff_leaves_file_and_hash_alone() {
    let dir = tempfile::tempdir().unwrap();
    let mut ws = fresh(dir.path());
    let css = RelPath::new("style.css").unwrap();
    let before = ws.read(&css).unwrap();
    let hash = ws.tree_hash();
    let bad = FileAction::Diff {
        path: css.clone(),
        hunks: vec![DiffHunk::from_lines(1, 1, vec![DiffLine::remove("no such line"), DiffLine::add("x")])],
    };
    assert!(matches!(ws.apply_action(&bad), Err(WorkspaceError::DiffContextMismatch { .. })));
    assert_eq!(ws.read(&css).unwrap(), before);
    assert_eq!(ws.tree_hash(), hash);
}

#[test]
fn exported_tree_reopens_with_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    let mut ws = fresh(dir.path());
    ws.apply_action(&FileAction::Create { path: RelPath::new("js/app.js").unwrap(), content: "console.log(1);\n".into() }).unwrap();
    let export = dir.path().join("export");
    ws.export_tree(&export).unwrap();
    let reopened = WorkspaceState::open(ws.template().clone(), &export).unwrap();
    assert_eq!(reopened.tree_hash(), ws.tree_hash());
}
