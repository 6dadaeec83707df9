//! Versioned prompt templates.
//!
//! Built-in templates ship inside the binary; a directory containing files
//! with the same names (`<name>.v1.txt`) overrides them one by one.

use std::collections::BTreeMap;
use std::path::Path;

/// Version suffix of the built-in template set.
pub const PROMPT_VERSION: &str = "v1";

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../prompts/", $name, ".v1.txt")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin![
    "decompose",
    "elaborate",
    "testcase",
    "straightforward",
    "template_select",
    "context_select",
    "develop_system",
    "develop",
    "response_format",
    "driver_step",
    "driver_decision",
    "crash_check",
    "visual_diff",
    "visual_similarity",
];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt template {0:?}")]
    Unknown(String),
    #[error("template {template:?} has no value for placeholder {placeholder:?}")]
    MissingValue { template: String, placeholder: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<String, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        PromptSet {
            templates: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Built-ins overridden by any `<name>.v1.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for (name, _) in BUILTIN {
            let path = dir.join(format!("{name}.{PROMPT_VERSION}.txt"));
            if path.is_file() {
                let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                set.templates.insert(name.to_string(), text);
            }
        }
        Ok(set)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn raw(&self, name: &str) -> Result<&str, PromptError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| PromptError::Unknown(name.to_string()))
    }

    /// Substitute every `{{key}}`. Unknown placeholders are an error;
    /// unused values are ignored.
    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let template = self.raw(name)?;
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        while let Some(start) = rest.find("{{") {
            let Some(len) = rest[start + 2..].find("}}") else {
                break;
            };
            let key = &rest[start + 2..start + 2 + len];
            let value = values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| PromptError::MissingValue {
                    template: name.to_string(),
                    placeholder: key.to_string(),
                })?;
            out.push_str(&rest[..start]);
            out.push_str(value);
            rest = &rest[start + 2 + len + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_placeholders_once() {
        let set = PromptSet::builtin();
        let text = set
            .render("template_select", &[("templates", "- a: A"), ("description", "{{description}}")])
            .unwrap();
        assert!(text.contains("- a: A"));
        // Substituted values are not re-expanded.
        assert!(text.contains("{{description}}"));
    }

    #[test]
    fn missing_value_is_an_error() {
        let err = PromptSet::builtin().render("template_select", &[]).unwrap_err();
        assert!(matches!(err, PromptError::MissingValue { .. }));
    }

    #[test]
    fn overrides_replace_single_templates() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("crash_check.v1.txt"), "custom {{page_text}}").unwrap();
        let set = PromptSet::with_overrides(dir.path()).unwrap();
        assert_eq!(set.render("crash_check", &[("page_text", "x")]).unwrap(), "custom x");
        assert_eq!(set.raw("develop").unwrap(), PromptSet::builtin().raw("develop").unwrap());
    }
}
