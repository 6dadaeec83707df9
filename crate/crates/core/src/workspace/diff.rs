//! Unified diff hunks: parsing and strict (no fuzz) application.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineTag {
    Context,
    Add,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    pub tag: LineTag,
    pub text: String,
}

impl DiffLine {
    pub fn context(text: impl Into<String>) -> Self {
        DiffLine { tag: LineTag::Context, text: text.into() }
    }
    pub fn add(text: impl Into<String>) -> Self {
        DiffLine { tag: LineTag::Add, text: text.into() }
    }
    pub fn remove(text: impl Into<String>) -> Self {
        DiffLine { tag: LineTag::Remove, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffHunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    pub lines: Vec<DiffLine>,
}

impl DiffHunk {
    /// Builds a hunk and derives both lengths from its lines.
    pub fn from_lines(old_start: usize, new_start: usize, lines: Vec<DiffLine>) -> Self {
        let old_len = lines.iter().filter(|l| l.tag != LineTag::Add).count();
        let new_len = lines.iter().filter(|l| l.tag != LineTag::Remove).count();
        DiffHunk { old_start, old_len, new_start, new_len, lines }
    }

    /// Zero-based index of the first old line this hunk covers.
    pub fn old_index(&self) -> usize {
        if self.old_len == 0 {
            self.old_start
        } else {
            self.old_start.saturating_sub(1)
        }
    }

    pub fn old_lines(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter(|l| l.tag != LineTag::Add).map(|l| l.text.as_str())
    }

    pub fn new_lines(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter(|l| l.tag != LineTag::Remove).map(|l| l.text.as_str())
    }

    fn check_counts(&self) -> Result<(), String> {
        let old = self.old_lines().count();
        let new = self.new_lines().count();
        if old != self.old_len || new != self.new_len {
            return Err(format!(
                "hunk @@ -{},{} +{},{} @@ has {old} old and {new} new lines",
                self.old_start, self.old_len, self.new_start, self.new_len
            ));
        }
        if self.old_len > 0 && self.old_start == 0 {
            return Err("hunk with old lines cannot start at line 0".into());
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "@@ -{},{} +{},{} @@\n",
            self.old_start, self.old_len, self.new_start, self.new_len
        );
        for line in &self.lines {
            out.push(match line.tag {
                LineTag::Context => ' ',
                LineTag::Add => '+',
                LineTag::Remove => '-',
            });
            out.push_str(&line.text);
            out.push('\n');
        }
        out
    }
}

/// Checks line counts and strict ordering across hunks of one action.
pub fn validate_hunks(hunks: &[DiffHunk]) -> Result<(), String> {
    if hunks.is_empty() {
        return Err("diff has no hunks".into());
    }
    let mut prev_end: Option<usize> = None;
    let mut prev_start: Option<usize> = None;
    for hunk in hunks {
        hunk.check_counts()?;
        if let Some(p) = prev_start {
            if hunk.old_start <= p {
                return Err(format!("hunk old start {} is not after {p}", hunk.old_start));
            }
        }
        if let Some(end) = prev_end {
            if hunk.old_index() < end {
                return Err(format!("hunk at old line {} overlaps the previous hunk", hunk.old_start));
            }
        }
        prev_start = Some(hunk.old_start);
        prev_end = Some(hunk.old_index() + hunk.old_len);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("diff line {line}: {message}")]
pub struct DiffParseError {
    pub line: usize,
    pub message: String,
}

fn parse_range(spec: &str) -> Option<(usize, usize)> {
    match spec.split_once(',') {
        Some((start, len)) => Some((start.parse().ok()?, len.parse().ok()?)),
        None => Some((spec.parse().ok()?, 1)),
    }
}

fn parse_header(line: &str) -> Option<(usize, usize, usize, usize)> {
    let rest = line.strip_prefix("@@ ")?;
    let end = rest.find(" @@")?;
    let mut parts = rest[..end].split_whitespace();
    let old = parts.next()?.strip_prefix('-')?;
    let new = parts.next()?.strip_prefix('+')?;
    if parts.next().is_some() {
        return None;
    }
    let (os, ol) = parse_range(old)?;
    let (ns, nl) = parse_range(new)?;
    Some((os, ol, ns, nl))
}

/// Parse unified diff text into hunks. File headers (`---`/`+++`, `diff`,
/// `index`) before the first hunk are accepted and ignored.
pub fn parse_unified_diff(text: &str) -> Result<Vec<DiffHunk>, DiffParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut hunks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if line.starts_with("@@") {
            let (old_start, old_len, new_start, new_len) = parse_header(line).ok_or_else(|| DiffParseError {
                line: i + 1,
                message: format!("malformed hunk header {line:?}"),
            })?;
            i += 1;
            let mut body = Vec::new();
            let (mut old_seen, mut new_seen) = (0, 0);
            while (old_seen < old_len || new_seen < new_len) && i < lines.len() {
                let raw = lines[i];
                let parsed = if raw.is_empty() {
                    // Editors and models often drop the space of blank context lines.
                    DiffLine::context("")
                } else if raw.starts_with('\\') {
                    i += 1;
                    continue;
                } else {
                    let (tag, body_text) = raw.split_at(1);
                    match tag {
                        " " => DiffLine::context(body_text),
                        "+" => DiffLine::add(body_text),
                        "-" => DiffLine::remove(body_text),
                        _ => {
                            return Err(DiffParseError {
                                line: i + 1,
                                message: format!("unexpected line {raw:?} inside hunk"),
                            })
                        }
                    }
                };
                match parsed.tag {
                    LineTag::Context => {
                        old_seen += 1;
                        new_seen += 1;
                    }
                    LineTag::Add => new_seen += 1,
                    LineTag::Remove => old_seen += 1,
                }
                body.push(parsed);
                i += 1;
            }
            let hunk = DiffHunk { old_start, old_len, new_start, new_len, lines: body };
            hunk.check_counts().map_err(|message| DiffParseError { line: i, message })?;
            hunks.push(hunk);
        } else if line.starts_with('\\')
            || line.trim().is_empty()
            || (hunks.is_empty()
                && ["--- ", "+++ ", "diff ", "index "].iter().any(|p| line.starts_with(p)))
        {
            i += 1;
        } else {
            return Err(DiffParseError {
                line: i + 1,
                message: format!("unexpected line {line:?} outside a hunk"),
            });
        }
    }
    if hunks.is_empty() {
        return Err(DiffParseError { line: 0, message: "no hunks found".into() });
    }
    validate_hunks(&hunks).map_err(|message| DiffParseError { line: 0, message })?;
    Ok(hunks)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("hunk {hunk} expects {expected:?} at line {line}, found {found:?}")]
pub struct ContextMismatch {
    pub hunk: usize,
    pub line: usize,
    pub expected: String,
    pub found: Option<String>,
}

/// Split into lines, remembering whether the content ended in a newline.
pub(crate) fn split_lines(content: &str) -> (Vec<&str>, bool) {
    if content.is_empty() {
        return (Vec::new(), false);
    }
    let trailing = content.ends_with('\n');
    let body = if trailing { &content[..content.len() - 1] } else { content };
    (body.split('\n').collect(), trailing)
}

pub(crate) fn join_lines(lines: &[&str], trailing: bool) -> String {
    if lines.is_empty() {
        return String::new();
    }
    let mut out = lines.join("\n");
    if trailing {
        out.push('\n');
    }
    out
}

/// Apply hunks to `content`. Every context and removed line must match
/// exactly; on the first mismatch nothing is produced.
pub fn apply_hunks(content: &str, hunks: &[DiffHunk]) -> Result<String, ContextMismatch> {
    let (old, trailing) = split_lines(content);
    let mut out: Vec<&str> = Vec::with_capacity(old.len());
    let mut cursor = 0usize;
    for (h, hunk) in hunks.iter().enumerate() {
        let start = hunk.old_index();
        if start < cursor || start > old.len() {
            return Err(ContextMismatch {
                hunk: h,
                line: hunk.old_start,
                expected: format!("hunk start within 1..={}", old.len()),
                found: None,
            });
        }
        out.extend_from_slice(&old[cursor..start]);
        let mut pos = start;
        for line in &hunk.lines {
            match line.tag {
                LineTag::Add => out.push(line.text.as_str()),
                LineTag::Context | LineTag::Remove => {
                    let found = old.get(pos).copied();
                    if found != Some(line.text.as_str()) {
                        return Err(ContextMismatch {
                            hunk: h,
                            line: pos + 1,
                            expected: line.text.clone(),
                            found: found.map(str::to_string),
                        });
                    }
                    if line.tag == LineTag::Context {
                        out.push(line.text.as_str());
                    }
                    pos += 1;
                }
            }
        }
        cursor = pos;
    }
    out.extend_from_slice(&old[cursor..]);
    let trailing = trailing || old.is_empty();
    Ok(join_lines(&out, trailing))
}
