//! Removal of formatting artifacts from model-produced file payloads.

const ENTITIES: [(&str, char); 5] = [
    ("&lt;", '<'),
    ("&gt;", '>'),
    ("&amp;", '&'),
    ("&quot;", '"'),
    ("&#39;", '\''),
];

/// Strip a code fence that wraps the whole payload and unescape the five
/// standard HTML entities, repeating until nothing changes.
///
/// Repetition makes the function idempotent: nested fences and
/// double-escaped entities (`&amp;lt;`) are fully unwrapped in one call.
pub fn clean_artifact_text(text: &str) -> String {
    let mut current = clean_once(text);
    loop {
        let next = clean_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn clean_once(text: &str) -> String {
    let inner = strip_wrapping_fence(text).unwrap_or(text);
    unescape_entities(inner)
}

/// Returns the text between an opening fence line and a closing fence line
/// when together they wrap the entire (whitespace-trimmed) payload.
fn strip_wrapping_fence(text: &str) -> Option<&str> {
    let trimmed = text.trim();
    let after_ticks = trimmed.strip_prefix("```")?;
    let newline = after_ticks.find('\n')?;
    let info = &after_ticks[..newline];
    if info.contains('`') {
        return None;
    }
    let body = &after_ticks[newline + 1..];
    if body.trim_end() == "```" {
        return Some("");
    }
    let body = body.strip_suffix("```")?;
    let body = body.strip_suffix('\n')?;
    Some(body.strip_suffix('\r').unwrap_or(body))
}

/// Single left-to-right pass over the entity table.
pub fn unescape_entities(text: &str) -> String {
    if !text.contains('&') {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        match ENTITIES.iter().find(|(name, _)| tail.starts_with(name)) {
            Some((name, ch)) => {
                out.push(*ch);
                rest = &tail[name.len()..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Inverse of [`unescape_entities`] for the same five characters.
pub fn escape_entities(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ENTITIES.iter().find(|(_, c)| *c == ch) {
            Some((name, _)) => out.push_str(name),
            None => out.push(ch),
        }
    }
    out
}

/// True when `text` carries nothing the cleaner would act on.
pub fn has_artifacts(text: &str) -> bool {
    text.contains("```") || ENTITIES.iter().any(|(name, _)| text.contains(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_plain_fence() {
        assert_eq!(clean_artifact_text("```\nhello\n```"), "hello");
    }

    #[test]
    fn strips_fence_with_language_and_surrounding_space() {
        assert_eq!(clean_artifact_text("\n```tsx\nconst a = 1;\nconst b = 2;\n```\n"), "const a = 1;\nconst b = 2;");
    }

    #[test]
    fn unescapes_entities() {
        assert_eq!(clean_artifact_text("a &lt; b &amp;&amp; c"), "a < b && c");
        assert_eq!(clean_artifact_text("&quot;x&quot; &#39;y&#39; &gt;"), "\"x\" 'y' >");
    }

    #[test]
    fn inner_fences_are_kept() {
        let text = "# Readme\n\n```sh\nnpm run dev\n```\n";
        assert_eq!(clean_artifact_text(text), text);
    }

    #[test]
    fn unknown_entities_survive() {
        assert_eq!(clean_artifact_text("&nbsp;&copy; & &"), "&nbsp;&copy; & &");
    }

    #[test]
    fn double_escaped_entities_fully_decode() {
        assert_eq!(clean_artifact_text("&amp;lt;div&amp;gt;"), "<div>");
    }

    fn fragment() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("```".to_string()),
            Just("```js\n".to_string()),
            Just("\n".to_string()),
            Just("&lt;".to_string()),
            Just("&gt;".to_string()),
            Just("&amp;".to_string()),
            Just("&quot;".to_string()),
            Just("&#39;".to_string()),
            Just("&".to_string()),
            Just("#39;".to_string()),
            "[a-z <>\"']{0,6}",
        ]
    }

    proptest! {
        #[test]
        fn idempotent(parts in proptest::collection::vec(fragment(), 0..12)) {
            let text: String = parts.concat();
            let once = clean_artifact_text(&text);
            prop_assert_eq!(clean_artifact_text(&once), once);
        }

        #[test]
        fn non_destructive(text in "[a-zA-Z0-9 <>\"'`\n;#&]{0,40}") {
            prop_assume!(!has_artifacts(&text));
            prop_assert_eq!(clean_artifact_text(&text), text);
        }
    }
}
