use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use globset::{GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};

use super::WorkspaceError;

/// Manifest file name inside each template directory.
pub const MANIFEST_FILE: &str = "template.toml";
/// Directory holding the seed project inside each template directory.
pub const FILES_DIR: &str = "files";

/// Exclusions every manifest-loaded template inherits: dependency trees,
/// build output and anything hidden.
pub const DEFAULT_FILTER_RULES: &[&str] = &[
    "node_modules/**",
    "**/node_modules/**",
    "dist/**",
    "build/**",
    "out/**",
    "coverage/**",
    ".*",
    "**/.*",
    ".*/**",
    "**/.*/**",
    "**/*.lock",
    "package-lock.json",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadinessProbe {
    pub path: String,
    pub expected_status: u16,
}

impl Default for ReadinessProbe {
    fn default() -> Self {
        ReadinessProbe { path: "/".into(), expected_status: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateDescriptor {
    pub id: String,
    pub description: String,
    /// Shell command; `{port}` is substituted and `PORT` is exported.
    pub launch_command: String,
    #[serde(default)]
    pub install_command: Option<String>,
    #[serde(default)]
    pub probe: ReadinessProbe,
    #[serde(default)]
    pub filter_rules: Vec<String>,
    #[serde(default)]
    pub protected: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    /// Directory the seed files are copied from.
    #[serde(skip)]
    pub source_dir: PathBuf,
}

impl TemplateDescriptor {
    pub fn validate(&self) -> Result<(), WorkspaceError> {
        if self.id.trim().is_empty() {
            return Err(WorkspaceError::InvalidTemplate("template id is empty".into()));
        }
        if self.launch_command.trim().is_empty() {
            return Err(WorkspaceError::InvalidTemplate(format!(
                "template {} has an empty launch command",
                self.id
            )));
        }
        self.filter_set()?;
        Ok(())
    }

    pub fn filter_set(&self) -> Result<GlobSet, WorkspaceError> {
        build_globset(&self.filter_rules)
    }
}

pub(crate) fn build_globset(rules: &[String]) -> Result<GlobSet, WorkspaceError> {
    let mut builder = GlobSetBuilder::new();
    for rule in rules {
        let glob = globset::GlobBuilder::new(rule)
            .literal_separator(true)
            .build()
            .map_err(|e| WorkspaceError::InvalidTemplate(format!("filter rule {rule:?}: {e}")))?;
        builder.add(glob);
    }
    builder
        .build()
        .map_err(|e| WorkspaceError::InvalidTemplate(e.to_string()))
}

#[derive(Debug, Deserialize)]
struct Manifest {
    #[serde(default)]
    id: Option<String>,
    description: String,
    launch_command: String,
    #[serde(default)]
    install_command: Option<String>,
    #[serde(default)]
    probe: ReadinessProbe,
    #[serde(default)]
    filter_rules: Vec<String>,
    #[serde(default)]
    protected: Vec<String>,
    #[serde(default)]
    env: BTreeMap<String, String>,
}

/// Local directory of starter templates, one sub-directory per template:
///
/// ```text
/// <store>/<id>/template.toml
/// <store>/<id>/files/...
/// ```
#[derive(Debug, Clone)]
pub struct TemplateStore {
    root: PathBuf,
    templates: Vec<TemplateDescriptor>,
}

impl TemplateStore {
    pub fn load(root: &Path) -> Result<Self, WorkspaceError> {
        let entries = std::fs::read_dir(root).map_err(|e| WorkspaceError::io(root, e))?;
        let mut templates = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| WorkspaceError::io(root, e))?;
            let dir = entry.path();
            let manifest = dir.join(MANIFEST_FILE);
            if !manifest.is_file() {
                continue;
            }
            templates.push(Self::load_one(&dir, &manifest)?);
        }
        templates.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(TemplateStore { root: root.to_path_buf(), templates })
    }

    fn load_one(dir: &Path, manifest: &Path) -> Result<TemplateDescriptor, WorkspaceError> {
        let text = std::fs::read_to_string(manifest).map_err(|e| WorkspaceError::io(manifest, e))?;
        let m: Manifest = toml::from_str(&text)
            .map_err(|e| WorkspaceError::InvalidTemplate(format!("{}: {e}", manifest.display())))?;
        let dir_name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut filter_rules: Vec<String> = DEFAULT_FILTER_RULES.iter().map(|s| s.to_string()).collect();
        for rule in m.filter_rules {
            if !filter_rules.contains(&rule) {
                filter_rules.push(rule);
            }
        }
        let descriptor = TemplateDescriptor {
            id: m.id.unwrap_or(dir_name),
            description: m.description,
            launch_command: m.launch_command,
            install_command: m.install_command,
            probe: m.probe,
            filter_rules,
            protected: m.protected,
            env: m.env,
            source_dir: dir.join(FILES_DIR),
        };
        descriptor.validate()?;
        Ok(descriptor)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn templates(&self) -> &[TemplateDescriptor] {
        &self.templates
    }

    pub fn get(&self, id: &str) -> Result<&TemplateDescriptor, WorkspaceError> {
        self.templates
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| WorkspaceError::TemplateNotFound(id.to_string()))
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}
