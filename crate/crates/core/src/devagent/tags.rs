//! Lenient scanner for the XML-ish tags models emit. Never fails: anything
//! it cannot read becomes a diagnostic.

use std::collections::BTreeMap;

/// Case-insensitive search for `<name` followed by whitespace, `/` or `>`.
pub(crate) fn find_open(text: &str, name: &str, from: usize) -> Option<usize> {
    let needle = format!("<{}", name.to_ascii_lowercase());
    let lower = text.to_ascii_lowercase();
    let mut pos = from;
    while let Some(rel) = lower.get(pos..)?.find(&needle) {
        let at = pos + rel;
        let after = lower[at + needle.len()..].chars().next();
        if matches!(after, Some(c) if c.is_whitespace() || c == '>' || c == '/') {
            return Some(at);
        }
        pos = at + needle.len();
    }
    None
}

pub(crate) fn find_close(text: &str, name: &str, from: usize) -> Option<usize> {
    let needle = format!("</{}", name.to_ascii_lowercase());
    let lower = text.to_ascii_lowercase();
    let mut pos = from;
    while let Some(rel) = lower.get(pos..)?.find(&needle) {
        let at = pos + rel;
        let after = &lower[at + needle.len()..];
        if after.trim_start().starts_with('>') {
            return Some(at);
        }
        pos = at + needle.len();
    }
    None
}

/// Byte index just past the `>` closing the close tag starting at `at`.
pub(crate) fn close_tag_end(text: &str, at: usize) -> usize {
    text[at..].find('>').map(|i| at + i + 1).unwrap_or(text.len())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct OpenTag {
    pub attrs: BTreeMap<String, String>,
    /// Byte index just after the closing `>`.
    pub end: usize,
    pub self_closing: bool,
}

/// Parse the attribute list of the tag that opens at `start` (the `<`).
pub(crate) fn parse_open_tag(text: &str, start: usize, name_len: usize) -> Result<OpenTag, String> {
    let bytes = text.as_bytes();
    let mut i = start + 1 + name_len;
    let mut attrs = BTreeMap::new();
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() {
            return Err("unterminated tag".into());
        }
        match bytes[i] {
            b'>' => return Ok(OpenTag { attrs, end: i + 1, self_closing: false }),
            b'/' if bytes.get(i + 1) == Some(&b'>') => {
                return Ok(OpenTag { attrs, end: i + 2, self_closing: true })
            }
            b'<' => return Err("unterminated tag".into()),
            _ => {}
        }
        let name_start = i;
        while i < bytes.len() && !matches!(bytes[i], b'=' | b'>' | b'/' | b'<') && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let name = text[name_start..i].to_string();
        if name.is_empty() {
            return Err(format!("unexpected character {:?} in tag", bytes[i] as char));
        }
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if bytes.get(i) != Some(&b'=') {
            attrs.insert(name, String::new());
            continue;
        }
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let value = match bytes.get(i) {
            Some(&q) if q == b'"' || q == b'\'' => {
                let close = text[i + 1..]
                    .find(q as char)
                    .ok_or_else(|| format!("unterminated value for attribute {name}"))?;
                let v = text[i + 1..i + 1 + close].to_string();
                // A value running into another tag or line lost its closing quote.
                if v.contains(['<', '\n']) {
                    return Err(format!("unterminated value for attribute {name}"));
                }
                i = i + 1 + close + 1;
                v
            }
            Some(_) => {
                let s = i;
                while i < bytes.len() && !matches!(bytes[i], b'>' | b'/') && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                text[s..i].to_string()
            }
            None => return Err("unterminated tag".into()),
        };
        attrs.insert(name, value);
    }
}

/// Attribute lookup ignoring ASCII case.
pub(crate) fn attr<'a>(attrs: &'a BTreeMap<String, String>, key: &str) -> Option<&'a str> {
    attrs
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(key))
        .map(|(_, v)| v.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_attributes_in_any_quoting() {
        let text = r#"<Action type="file" filePath='src/a.js' diff=true>"#;
        let tag = parse_open_tag(text, 0, "Action".len()).unwrap();
        assert_eq!(attr(&tag.attrs, "filepath"), Some("src/a.js"));
        assert_eq!(attr(&tag.attrs, "diff"), Some("true"));
        assert_eq!(tag.end, text.len());
    }

    #[test]
    fn finds_tags_case_insensitively() {
        assert_eq!(find_open("xx <action a=1>", "Action", 0), Some(3));
        assert_eq!(find_open("<Actions>", "Action", 0), None);
        assert_eq!(find_close("a </ACTION > b", "Action", 0), Some(2));
    }

    #[test]
    fn value_running_into_next_tag_is_unterminated() {
        let text = "<IncludeFile path=\"a.js/>\n<IncludeFile path=\"b.js\"/>";
        assert!(parse_open_tag(text, 0, "IncludeFile".len()).is_err());
    }
}
