//! The development agent: template choice, context selection, prompt
//! construction and application of the model's file actions.

mod actions;
mod selection;
mod tags;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

pub use actions::{parse_actions_text, ActionDiagnostic, ParsedActions};
pub use selection::{parse_selection_text, ParsedSelection};

use crate::gateway::{
    Gateway, GatewayError, ModelReply, ParsedDocument, PromptBundle, Raster, ReplyGrammar,
};
use crate::prompts::{PromptError, PromptSet};
use crate::testgen::UserRequest;
use crate::workspace::{ApplyResult, RelPath, TemplateDescriptor, WorkspaceError, WorkspaceState};

#[derive(Debug, thiserror::Error)]
pub enum DevAgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("reply contains no well-formed file actions")]
    NoActionsFound { diagnostics: Vec<ActionDiagnostic> },
    #[error("template store is empty")]
    EmptyStore,
    #[error("development task has no instruction text")]
    EmptyTask,
}

/// Parse a development reply. Fails only when nothing usable was found.
pub fn parse_actions(reply: &ModelReply) -> Result<ParsedActions, DevAgentError> {
    let parsed = parse_actions_text(&reply.raw);
    if parsed.actions.is_empty() {
        return Err(DevAgentError::NoActionsFound { diagnostics: parsed.diagnostics });
    }
    Ok(parsed)
}

/// Instruction for one development step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DevTask {
    pub instruction: String,
    pub round: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_image: Option<Raster>,
}

impl DevTask {
    pub fn new(instruction: impl Into<String>, round: usize) -> Self {
        DevTask { instruction: instruction.into(), round, design_image: None }
    }

    pub fn validate(&self) -> Result<(), DevAgentError> {
        if self.instruction.trim().is_empty() {
            return Err(DevAgentError::EmptyTask);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSelection {
    pub included: Vec<RelPath>,
    pub excluded: Vec<RelPath>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub selection: ContextSelection,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotApplied {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSummary {
    pub round: usize,
    pub selection: ContextSelection,
    pub applied: Vec<ApplyResult>,
    pub skipped: Vec<NotApplied>,
    pub rejected: Vec<NotApplied>,
    pub diagnostics: Vec<String>,
    pub warnings: Vec<String>,
    /// No action could be applied; the loop decides what to do next.
    pub unproductive: bool,
}

/// Marker used in place of an empty chat summary.
pub const NO_HISTORY: &str = "No prior history.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DevConfig {
    /// Template used when classification names an unknown id.
    pub fallback_template: String,
    /// Maximum chat summary length in characters; oldest text is dropped.
    pub summary_budget: usize,
}

impl Default for DevConfig {
    fn default() -> Self {
        DevConfig { fallback_template: "vanilla-vite".into(), summary_budget: 4000 }
    }
}

pub struct DevAgent<'g> {
    gateway: &'g Gateway,
    prompts: Arc<PromptSet>,
    config: DevConfig,
}

impl<'g> DevAgent<'g> {
    pub fn new(gateway: &'g Gateway, prompts: Arc<PromptSet>, config: DevConfig) -> Self {
        DevAgent { gateway, prompts, config }
    }

    /// Ask the model to classify the application and pick a template.
    pub fn select_template(
        &self,
        request: &UserRequest,
        store: &[TemplateDescriptor],
    ) -> Result<TemplateDescriptor, DevAgentError> {
        match store {
            [] => return Err(DevAgentError::EmptyStore),
            [only] => return Ok(only.clone()),
            _ => {}
        }
        let listing: String = store
            .iter()
            .map(|t| format!("- {}: {}\n", t.id, t.description))
            .collect();
        let text = self.prompts.render(
            "template_select",
            &[("templates", listing.trim_end()), ("description", &request.description)],
        )?;
        let bundle = PromptBundle::new("You select starter templates.", ReplyGrammar::FreeText).with_text(text);
        let reply = self.gateway.complete(&bundle)?;
        if let Some(t) = match_template(&reply.raw, store) {
            return Ok(t.clone());
        }
        let fallback = store
            .iter()
            .find(|t| t.id == self.config.fallback_template)
            .unwrap_or(&store[0]);
        warn!(reply = %reply.raw.trim(), fallback = %fallback.id, "unknown template id, using fallback");
        Ok(fallback.clone())
    }

    /// Ask which files matter for `task` and update the context buffer:
    /// new buffer = (old ∪ included) ∖ excluded, restricted to filtered files.
    pub fn select_context(&self, ws: &mut WorkspaceState, task: &DevTask) -> Result<SelectionOutcome, DevAgentError> {
        let available = ws.filter_files();
        let listing: String = available.iter().map(|p| format!("- {p}\n")).collect();
        let buffer = ws.render_context().unwrap_or_else(|_| "(the context buffer is empty)".into());
        let text = self.prompts.render(
            "context_select",
            &[
                ("available_files", listing.trim_end()),
                ("context_buffer", &buffer),
                ("task", &task.instruction),
            ],
        )?;
        let bundle = PromptBundle::new("You select relevant files for a coding task.", ReplyGrammar::XmlSelection)
            .with_text(text);
        let parsed = match self.gateway.complete_structured(&bundle)? {
            ParsedDocument::Selection(s) => s,
            other => unreachable!("selection grammar produced {other:?}"),
        };
        Ok(apply_selection(ws, &available, &parsed))
    }

    /// Assemble the development prompt: context, chat summary, task and
    /// response format, in that order.
    pub fn build_dev_prompt(&self, ws: &WorkspaceState, task: &DevTask) -> Result<PromptBundle, DevAgentError> {
        let context = ws.render_context()?;
        let summary = if ws.chat_summary().trim().is_empty() { NO_HISTORY } else { ws.chat_summary() };
        let format = self.prompts.render("response_format", &[])?;
        let text = self.prompts.render(
            "develop",
            &[
                ("context", &context),
                ("chat_summary", summary),
                ("instructions", &task.instruction),
                ("response_format", format.trim_end()),
            ],
        )?;
        let protected: String = if ws.locked().is_empty() {
            "- (none)".into()
        } else {
            ws.locked().iter().map(|p| format!("- {p}")).collect::<Vec<_>>().join("\n")
        };
        let system = self.prompts.render("develop_system", &[("protected_files", &protected)])?;
        let mut bundle = PromptBundle::new(system.trim_end(), ReplyGrammar::XmlActions).with_text(text);
        if let Some(image) = &task.design_image {
            bundle = bundle
                .with_text("Reference design image for the application:")
                .with_image(image.clone());
        }
        Ok(bundle)
    }

    /// One full development iteration against the workspace.
    pub fn develop_step(&self, ws: &mut WorkspaceState, task: &DevTask) -> Result<StepSummary, DevAgentError> {
        task.validate()?;
        let mut summary = StepSummary { round: task.round, ..StepSummary::default() };
        match self.select_context(ws, task) {
            Ok(outcome) => {
                summary.selection = outcome.selection;
                summary.warnings.extend(outcome.warnings);
            }
            Err(DevAgentError::Gateway(e)) if !e.is_fatal() => {
                summary.warnings.push(format!("context selection failed, keeping buffer: {e}"));
            }
            Err(e) => return Err(e),
        }
        let bundle = match self.build_dev_prompt(ws, task) {
            Ok(b) => b,
            Err(DevAgentError::Workspace(WorkspaceError::EmptyBuffer)) => {
                summary.warnings.push("context buffer is empty; nothing to develop against".into());
                summary.unproductive = true;
                self.append_summary(ws, task, &summary);
                return Ok(summary);
            }
            Err(e) => return Err(e),
        };
        let parsed = match self.gateway.complete_structured(&bundle) {
            Ok(ParsedDocument::Actions(p)) => p,
            Ok(other) => unreachable!("action grammar produced {other:?}"),
            Err(e) if !e.is_fatal() => {
                summary.diagnostics.push(e.to_string());
                summary.unproductive = true;
                self.append_summary(ws, task, &summary);
                return Ok(summary);
            }
            Err(e) => return Err(e.into()),
        };
        summary.diagnostics.extend(parsed.diagnostics.iter().map(ToString::to_string));
        for action in &parsed.actions {
            match ws.apply_action(action) {
                Ok(result) => summary.applied.push(result),
                Err(WorkspaceError::LockedFileSkipped { path }) => summary.skipped.push(NotApplied {
                    path: path.to_string(),
                    reason: "file is locked".into(),
                }),
                Err(WorkspaceError::Io { path, source }) => {
                    return Err(WorkspaceError::Io { path, source }.into());
                }
                Err(e) => summary.rejected.push(NotApplied {
                    path: action.path().to_string(),
                    reason: e.to_string(),
                }),
            }
        }
        summary.unproductive = summary.applied.is_empty();
        info!(
            round = task.round,
            applied = summary.applied.len(),
            skipped = summary.skipped.len(),
            rejected = summary.rejected.len(),
            "development step finished"
        );
        self.append_summary(ws, task, &summary);
        Ok(summary)
    }

    fn append_summary(&self, ws: &mut WorkspaceState, task: &DevTask, step: &StepSummary) {
        let digest = step_digest(task, step);
        let mut text = ws.chat_summary().to_string();
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&digest);
        ws.set_chat_summary(truncate_oldest(&text, self.config.summary_budget));
    }
}

fn match_template<'a>(reply: &str, store: &'a [TemplateDescriptor]) -> Option<&'a TemplateDescriptor> {
    let first = reply
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .trim_matches(|c: char| c == '`' || c == '"' || c == '\'' || c == '.' || c == '*');
    if let Some(t) = store.iter().find(|t| t.id.eq_ignore_ascii_case(first)) {
        return Some(t);
    }
    // Otherwise accept a reply that mentions exactly one id as a token.
    let lower = reply.to_ascii_lowercase();
    let tokens: Vec<&str> = lower
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_'))
        .collect();
    let mut hits = store.iter().filter(|t| tokens.contains(&t.id.to_ascii_lowercase().as_str()));
    match (hits.next(), hits.next()) {
        (Some(t), None) => Some(t),
        _ => None,
    }
}

fn apply_selection(ws: &mut WorkspaceState, available: &[RelPath], parsed: &ParsedSelection) -> SelectionOutcome {
    let mut out = SelectionOutcome::default();
    out.warnings.extend(parsed.diagnostics.iter().cloned());
    let resolve = |raw: &str, warnings: &mut Vec<String>| -> Option<RelPath> {
        match RelPath::new(raw) {
            Ok(p) if available.contains(&p) => Some(p),
            Ok(p) => {
                warnings.push(format!("UnknownPathInSelection: {p} is not an available file; dropped"));
                None
            }
            Err(e) => {
                warnings.push(format!("UnknownPathInSelection: {e}; dropped"));
                None
            }
        }
    };
    let mut excluded = Vec::new();
    for raw in &parsed.excluded {
        if let Some(p) = resolve(raw, &mut out.warnings) {
            if !excluded.contains(&p) {
                excluded.push(p);
            }
        }
    }
    let mut included = Vec::new();
    for raw in &parsed.included {
        if let Some(p) = resolve(raw, &mut out.warnings) {
            if excluded.contains(&p) {
                out.warnings.push(format!("{p} both included and excluded; excluded wins"));
            } else if !included.contains(&p) {
                included.push(p);
            }
        }
    }
    for p in &excluded {
        ws.drop_from_buffer(p);
    }
    for p in &included {
        if let Err(e) = ws.load_into_buffer(p) {
            out.warnings.push(format!("could not load {p}: {e}"));
        }
    }
    // Keep the buffer inside the filtered list.
    for p in ws.buffered_paths() {
        if !available.contains(&p) {
            ws.drop_from_buffer(&p);
        }
    }
    for w in &out.warnings {
        warn!("{w}");
    }
    out.selection = ContextSelection { included, excluded };
    out
}

fn first_line(text: &str, max: usize) -> String {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    if line.chars().count() > max {
        let cut: String = line.chars().take(max).collect();
        format!("{cut}...")
    } else {
        line.to_string()
    }
}

fn step_digest(task: &DevTask, step: &StepSummary) -> String {
    let join = |items: Vec<String>| if items.is_empty() { "none".to_string() } else { items.join(", ") };
    let applied = join(step.applied.iter().map(|a| a.path.to_string()).collect());
    let skipped = join(step.skipped.iter().map(|a| a.path.clone()).collect());
    let rejected = join(step.rejected.iter().map(|a| a.path.clone()).collect());
    let mut digest = format!(
        "[round {}] request: {} | changed: {applied} | skipped (locked): {skipped} | rejected: {rejected}",
        task.round,
        first_line(&task.instruction, 160)
    );
    if step.unproductive {
        digest.push_str(" | no usable file actions were produced");
    }
    digest
}

/// Keep the newest `budget` characters, cutting at a line boundary when
/// one exists in the kept part.
pub fn truncate_oldest(text: &str, budget: usize) -> String {
    let count = text.chars().count();
    if count <= budget {
        return text.to_string();
    }
    let tail: String = text.chars().skip(count - budget).collect();
    match tail.find('\n') {
        Some(nl) if nl + 1 < tail.len() => tail[nl + 1..].to_string(),
        _ => tail,
    }
}
