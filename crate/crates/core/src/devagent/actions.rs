//! Parsing of file action tags from development replies.
//!
//! Grammar (frozen):
//!
//! ```text
//! <Action type="file" filePath="relative/path">full content</Action>
//! <Action type="file" filePath="relative/path" diff="true">unified diff</Action>
//! <Action type="file" filePath="relative/path" operation="create">full content</Action>
//! ```
//!
//! Attribute names and the tag name are case-insensitive. Payloads are
//! cleaned of code fences and escaped entities. One newline directly after
//! the opening tag and an indentation-only line before the closing tag are
//! not part of the payload. Non-empty full-content payloads always end in a
//! newline.

use serde::{Deserialize, Serialize};

use super::tags::{attr, close_tag_end, find_close, find_open, parse_open_tag};
use crate::workspace::{clean_artifact_text, parse_unified_diff, FileAction, RelPath};

const TAG: &str = "Action";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDiagnostic {
    /// Byte offset of the offending tag in the reply.
    pub offset: usize,
    pub message: String,
}

impl std::fmt::Display for ActionDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "at byte {}: {}", self.offset, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedActions {
    pub actions: Vec<FileAction>,
    pub diagnostics: Vec<ActionDiagnostic>,
}

fn is_truthy(v: &str) -> bool {
    matches!(v.trim().to_ascii_lowercase().as_str(), "true" | "1" | "yes" | "")
}

fn trim_payload(body: &str) -> &str {
    let body = body
        .strip_prefix("\r\n")
        .or_else(|| body.strip_prefix('\n'))
        .unwrap_or(body);
    match body.rfind('\n') {
        Some(nl) if body[nl + 1..].trim().is_empty() => &body[..nl + 1],
        None if body.trim().is_empty() => "",
        _ => body,
    }
}

fn build_action(attrs: &std::collections::BTreeMap<String, String>, body: &str) -> Result<FileAction, String> {
    match attr(attrs, "type") {
        Some(t) if t.eq_ignore_ascii_case("file") => {}
        Some(other) => return Err(format!("unsupported action type {other:?}")),
        None => return Err("action tag without a type attribute".into()),
    }
    let raw_path = attr(attrs, "filePath").ok_or("action tag without a filePath attribute")?;
    let path = RelPath::new(raw_path).map_err(|e| e.to_string())?;
    let payload = trim_payload(body);
    let diff_mode = attr(attrs, "diff").map(is_truthy).unwrap_or(false);
    if diff_mode {
        let text = clean_artifact_text(payload);
        let hunks = parse_unified_diff(&text).map_err(|e| format!("{path}: {e}"))?;
        return Ok(FileAction::Diff { path, hunks });
    }
    let mut content = clean_artifact_text(payload);
    if !content.is_empty() && !content.ends_with('\n') {
        content.push('\n');
    }
    let create = attr(attrs, "operation").is_some_and(|op| op.eq_ignore_ascii_case("create"));
    Ok(if create {
        FileAction::Create { path, content }
    } else {
        FileAction::FullReplace { path, content }
    })
}

/// Extract every well-formed action. Never fails; malformed tags are
/// reported as diagnostics and do not affect their siblings.
pub fn parse_actions_text(raw: &str) -> ParsedActions {
    let mut out = ParsedActions::default();
    let mut pos = 0;
    while let Some(start) = find_open(raw, TAG, pos) {
        let tag = match parse_open_tag(raw, start, TAG.len()) {
            Ok(tag) => tag,
            Err(message) => {
                out.diagnostics.push(ActionDiagnostic { offset: start, message });
                pos = start + 1;
                continue;
            }
        };
        if tag.self_closing {
            out.diagnostics.push(ActionDiagnostic {
                offset: start,
                message: "self-closing action tag carries no content".into(),
            });
            pos = tag.end;
            continue;
        }
        let close = find_close(raw, TAG, tag.end);
        let next_open = find_open(raw, TAG, tag.end);
        let close = match (close, next_open) {
            (Some(c), Some(n)) if n < c => None,
            (c, _) => c,
        };
        let Some(close) = close else {
            out.diagnostics.push(ActionDiagnostic {
                offset: start,
                message: "action tag is not closed (truncated reply?)".into(),
            });
            pos = next_open.unwrap_or(raw.len());
            continue;
        };
        match build_action(&tag.attrs, &raw[tag.end..close]) {
            Ok(action) => out.actions.push(action),
            Err(message) => out.diagnostics.push(ActionDiagnostic { offset: start, message }),
        }
        pos = close_tag_end(raw, close);
    }
    out
}
