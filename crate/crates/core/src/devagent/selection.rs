//! Parsing of context selection replies:
//!
//! ```text
//! <FileSelection>
//!   <IncludeFile path="src/App.jsx"/>
//!   <ExcludeFile path="src/old.js"/>
//! </FileSelection>
//! ```
//!
//! `<IncludeFile>src/App.jsx</IncludeFile>` is accepted as well.

use serde::{Deserialize, Serialize};

use super::tags::{attr, close_tag_end, find_close, find_open, parse_open_tag};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSelection {
    pub wrapper_found: bool,
    pub included: Vec<String>,
    pub excluded: Vec<String>,
    pub diagnostics: Vec<String>,
}

fn collect(raw: &str, name: &str, into: &mut Vec<String>, diagnostics: &mut Vec<String>) {
    let mut pos = 0;
    while let Some(start) = find_open(raw, name, pos) {
        let tag = match parse_open_tag(raw, start, name.len()) {
            Ok(tag) => tag,
            Err(e) => {
                diagnostics.push(format!("<{name}> at byte {start}: {e}"));
                pos = start + 1;
                continue;
            }
        };
        pos = tag.end;
        let path = match attr(&tag.attrs, "path").or_else(|| attr(&tag.attrs, "filePath")) {
            Some(p) => Some(p.trim().to_string()),
            None if !tag.self_closing => match find_close(raw, name, tag.end) {
                Some(close) => {
                    pos = close_tag_end(raw, close);
                    Some(raw[tag.end..close].trim().to_string())
                }
                None => None,
            },
            None => None,
        };
        match path {
            Some(p) if !p.is_empty() => {
                if !into.contains(&p) {
                    into.push(p);
                }
            }
            _ => diagnostics.push(format!("<{name}> at byte {start} has no path")),
        }
    }
}

pub fn parse_selection_text(raw: &str) -> ParsedSelection {
    let mut out = ParsedSelection {
        wrapper_found: find_open(raw, "FileSelection", 0).is_some(),
        ..ParsedSelection::default()
    };
    collect(raw, "IncludeFile", &mut out.included, &mut out.diagnostics);
    collect(raw, "ExcludeFile", &mut out.excluded, &mut out.diagnostics);
    out
}
