//! Test generation agent: requirement decomposition, elaboration, and one
//! soap-opera test case per requirement.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::info;

use crate::gateway::{Gateway, GatewayError, PromptBundle, Raster, ReplyGrammar};
use crate::prompts::{PromptError, PromptSet};

/// Version of the suite interchange schema written and accepted.
pub const SUITE_SCHEMA_VERSION: u32 = 1;

/// Marker for spec aspects that do not apply.
pub const NONE_MARKER: &str = "none";

#[derive(Debug, thiserror::Error)]
pub enum TestgenError {
    #[error("request description is empty")]
    EmptyDescription,
    #[error("decomposition returned no requirements")]
    EmptyDecomposition,
    #[error("{stage} stage failed{}: {source}", requirement.as_ref().map(|r| format!(" for {r}")).unwrap_or_default())]
    Stage {
        stage: Stage,
        requirement: Option<String>,
        #[source]
        source: Box<TestgenError>,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid suite: {0}")]
    InvalidSuite(String),
    #[error("unsupported suite schema version {0} (expected {SUITE_SCHEMA_VERSION})")]
    UnsupportedSchemaVersion(u32),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl TestgenError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            TestgenError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// Gateway error at the root of this failure, if any.
    pub fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            TestgenError::Gateway(e) => Some(e),
            TestgenError::Stage { source, .. } => source.gateway_error(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Decomposition,
    Elaboration,
    TestCase,
    Straightforward,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Decomposition => "decomposition",
            Stage::Elaboration => "elaboration",
            Stage::TestCase => "test-case",
            Stage::Straightforward => "straightforward",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRequest {
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_image: Option<Raster>,
}

impl UserRequest {
    pub fn new(description: impl Into<String>) -> Result<Self, TestgenError> {
        let request = UserRequest { description: description.into(), design_image: None };
        request.validate()?;
        Ok(request)
    }

    pub fn with_image(mut self, image: Raster) -> Self {
        self.design_image = Some(image);
        self
    }

    pub fn validate(&self) -> Result<(), TestgenError> {
        if self.description.trim().is_empty() {
            return Err(TestgenError::EmptyDescription);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequirementKind {
    Functionality,
    LayoutConstraint,
    DesignElement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Explicit,
    Inferred,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub id: String,
    pub statement: String,
    pub kind: RequirementKind,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSourceSpec {
    InlineDataset {
        content: Value,
    },
    Database {
        schema: Value,
        #[serde(default)]
        setup: String,
    },
    ExternalApi {
        descriptor: String,
        placeholder: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailedRequirement {
    pub requirement_id: String,
    pub functional_spec: String,
    pub static_ui_spec: String,
    pub interaction_spec: String,
    #[serde(default)]
    pub data_sources: Vec<DataSourceSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestCategory {
    #[default]
    Functionality,
    DataDisplay,
    DesignValidation,
}

impl TestCategory {
    pub const ALL: [TestCategory; 3] =
        [TestCategory::Functionality, TestCategory::DataDisplay, TestCategory::DesignValidation];

    /// Lenient label parsing; unknown labels map to `None`.
    pub fn from_label(label: &str) -> Option<Self> {
        let norm: String = label
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "functionality" | "functional" => Some(TestCategory::Functionality),
            "datadisplay" | "data" => Some(TestCategory::DataDisplay),
            "designvalidation" | "design" => Some(TestCategory::DesignValidation),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TestCategory::Functionality => "Functionality",
            TestCategory::DataDisplay => "Data Display",
            TestCategory::DesignValidation => "Design Validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub goal: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestStep {
    pub index: usize,
    pub action: String,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoapOperaTestCase {
    pub id: String,
    pub requirement_id: String,
    pub persona: Persona,
    pub category: TestCategory,
    pub steps: Vec<TestStep>,
}

impl SoapOperaTestCase {
    pub fn validate(&self) -> Result<(), String> {
        if self.steps.is_empty() {
            return Err(format!("test case {} has no steps", self.id));
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.index != i + 1 {
                return Err(format!("test case {} step indices are not contiguous from 1", self.id));
            }
            if step.action.trim().is_empty() || step.expected.trim().is_empty() {
                return Err(format!("test case {} step {} lacks an action or expectation", self.id, i + 1));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestgenMode {
    #[default]
    MultiStep,
    Straightforward,
}

impl std::str::FromStr for TestgenMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multi-step" => Ok(TestgenMode::MultiStep),
            "straightforward" => Ok(TestgenMode::Straightforward),
            other => Err(format!("unknown test generation mode {other:?}")),
        }
    }
}

/// Versioned on-disk suite: requirements, detailed requirements and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub schema_version: u32,
    pub mode: TestgenMode,
    pub request: String,
    pub requirements: Vec<Requirement>,
    pub detailed: Vec<DetailedRequirement>,
    pub tests: Vec<SoapOperaTestCase>,
}

impl Suite {
    /// Checks the one-test-per-requirement bijection and per-test invariants.
    pub fn validate(&self) -> Result<(), TestgenError> {
        if self.schema_version != SUITE_SCHEMA_VERSION {
            return Err(TestgenError::UnsupportedSchemaVersion(self.schema_version));
        }
        let mut ids = std::collections::BTreeSet::new();
        for r in &self.requirements {
            if !ids.insert(r.id.as_str()) {
                return Err(TestgenError::InvalidSuite(format!("duplicate requirement id {}", r.id)));
            }
        }
        if self.tests.len() != self.requirements.len() {
            return Err(TestgenError::InvalidSuite(format!(
                "{} tests for {} requirements",
                self.tests.len(),
                self.requirements.len()
            )));
        }
        let mut covered = std::collections::BTreeSet::new();
        for t in &self.tests {
            if !ids.contains(t.requirement_id.as_str()) {
                return Err(TestgenError::InvalidSuite(format!(
                    "test {} references unknown requirement {}",
                    t.id, t.requirement_id
                )));
            }
            if !covered.insert(t.requirement_id.as_str()) {
                return Err(TestgenError::InvalidSuite(format!(
                    "requirement {} has more than one test",
                    t.requirement_id
                )));
            }
            t.validate().map_err(TestgenError::InvalidSuite)?;
        }
        for d in &self.detailed {
            if !ids.contains(d.requirement_id.as_str()) {
                return Err(TestgenError::InvalidSuite(format!(
                    "detailed requirement references unknown requirement {}",
                    d.requirement_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("suite serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, TestgenError> {
        let raw: Value = serde_json::from_str(text).map_err(|e| TestgenError::InvalidSuite(e.to_string()))?;
        let version = raw.get("schema_version").and_then(Value::as_u64).unwrap_or(0) as u32;
        if version != SUITE_SCHEMA_VERSION {
            return Err(TestgenError::UnsupportedSchemaVersion(version));
        }
        let suite: Suite = serde_json::from_value(raw).map_err(|e| TestgenError::InvalidSuite(e.to_string()))?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn write(&self, path: &Path) -> Result<(), TestgenError> {
        std::fs::write(path, self.to_json()).map_err(|e| TestgenError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, TestgenError> {
        let text = std::fs::read_to_string(path).map_err(|e| TestgenError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    /// Numbered requirement list handed to the development agent.
    pub fn requirement_list(&self) -> String {
        self.requirements
            .iter()
            .map(|r| {
                let origin = match r.origin {
                    Origin::Explicit => "",
                    Origin::Inferred => " (inferred)",
                };
                format!("- [{}] {}{origin}", r.id, r.statement)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

// ---- lenient reply decoding ------------------------------------------------

fn str_field<'a>(obj: &'a Value, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| obj.get(*k).and_then(Value::as_str)).map(str::trim)
}

fn parse_kind(label: Option<&str>) -> RequirementKind {
    let norm: String = label.unwrap_or("").chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
    match norm.as_str() {
        "layoutconstraint" | "layout" => RequirementKind::LayoutConstraint,
        "designelement" | "design" => RequirementKind::DesignElement,
        _ => RequirementKind::Functionality,
    }
}

fn parse_origin(obj: &Value) -> Origin {
    if obj.get("inferred").and_then(Value::as_bool) == Some(true) {
        return Origin::Inferred;
    }
    match str_field(obj, &["origin"]).map(str::to_ascii_lowercase).as_deref() {
        Some("inferred") | Some("implicit") => Origin::Inferred,
        _ => Origin::Explicit,
    }
}

fn decode_requirement(obj: &Value, position: usize) -> Result<Requirement, String> {
    let statement = str_field(obj, &["statement", "requirement", "description"])
        .filter(|s| !s.is_empty())
        .ok_or_else(|| format!("requirement {} has no statement", position + 1))?;
    let id = str_field(obj, &["id"])
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .unwrap_or_else(|| format!("R{}", position + 1));
    Ok(Requirement {
        id,
        statement: statement.to_string(),
        kind: parse_kind(str_field(obj, &["kind", "type"])),
        origin: parse_origin(obj),
    })
}

fn decode_requirements(items: &[Value]) -> Result<Vec<Requirement>, String> {
    let mut out: Vec<Requirement> = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let mut req = decode_requirement(item, i)?;
        if out.iter().any(|r| r.id == req.id) {
            req.id = format!("R{}", i + 1);
            if out.iter().any(|r| r.id == req.id) {
                return Err(format!("duplicate requirement id {}", req.id));
            }
        }
        out.push(req);
    }
    Ok(out)
}

fn is_empty_value(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::String(s) => s.trim().is_empty(),
        Value::Array(a) => a.is_empty(),
        Value::Object(o) => o.is_empty(),
        _ => false,
    }
}

fn decode_data_source(v: &Value) -> Result<DataSourceSpec, String> {
    let kind = str_field(v, &["kind", "type"]).unwrap_or("").to_ascii_lowercase().replace(['_', ' '], "-");
    match kind.as_str() {
        "database" | "db" => {
            let schema = v.get("schema").cloned().unwrap_or(Value::Null);
            if is_empty_value(&schema) {
                return Err("database data source without a schema".into());
            }
            let setup = match v.get("setup").or_else(|| v.get("setup_instructions")) {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Array(items)) => items
                    .iter()
                    .map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string()))
                    .collect::<Vec<_>>()
                    .join("\n"),
                Some(other) => other.to_string(),
                None => String::new(),
            };
            Ok(DataSourceSpec::Database { schema, setup })
        }
        "external-api" | "api" | "externalapi" => {
            let descriptor = str_field(v, &["descriptor", "endpoint", "description", "name"])
                .unwrap_or("unspecified external API")
                .to_string();
            // Anything not explicitly marked as a real integration stays a placeholder.
            let placeholder = v.get("placeholder").and_then(Value::as_bool).unwrap_or(true);
            Ok(DataSourceSpec::ExternalApi { descriptor, placeholder })
        }
        "inline-dataset" | "dataset" | "inline" | "predefined-dataset" => Ok(DataSourceSpec::InlineDataset {
            content: v.get("content").or_else(|| v.get("data")).cloned().unwrap_or(Value::Null),
        }),
        other => Err(format!("unknown data source kind {other:?}")),
    }
}

fn spec_text(obj: &Value, keys: &[&str]) -> String {
    match keys.iter().find_map(|k| obj.get(*k)) {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        Some(Value::Null) | None => NONE_MARKER.to_string(),
        Some(Value::String(_)) => NONE_MARKER.to_string(),
        Some(other) => other.to_string(),
    }
}

fn decode_detailed(items: &[Value], req: &Requirement) -> Result<DetailedRequirement, String> {
    let obj = match items {
        [one] => one,
        [] => return Err("expected one detailed requirement, got none".into()),
        _ => return Err(format!("expected one detailed requirement, got {}", items.len())),
    };
    let data_sources = match obj.get("data_sources") {
        Some(Value::Array(list)) => list.iter().map(decode_data_source).collect::<Result<Vec<_>, _>>()?,
        Some(Value::Null) | None => Vec::new(),
        Some(_) => return Err("data_sources must be an array".into()),
    };
    let mut detailed = DetailedRequirement {
        requirement_id: req.id.clone(),
        functional_spec: spec_text(obj, &["functional_spec", "functionality"]),
        static_ui_spec: spec_text(obj, &["static_ui_spec", "static_ui", "ui"]),
        interaction_spec: spec_text(obj, &["interaction_spec", "interactions", "dynamic_interactions"]),
        data_sources,
    };
    if req.kind == RequirementKind::LayoutConstraint {
        detailed.interaction_spec = NONE_MARKER.to_string();
        if detailed.static_ui_spec == NONE_MARKER {
            detailed.static_ui_spec = req.statement.clone();
        }
    }
    Ok(detailed)
}

fn decode_test_case(obj: &Value, req_id: &str) -> Result<SoapOperaTestCase, String> {
    let persona = obj.get("persona").ok_or("test case without persona")?;
    let (name, goal) = match persona {
        Value::Object(_) => (
            str_field(persona, &["name"]).unwrap_or("").to_string(),
            str_field(persona, &["goal", "goals"]).unwrap_or("").to_string(),
        ),
        Value::String(s) => (s.trim().to_string(), String::new()),
        _ => (String::new(), String::new()),
    };
    if name.is_empty() || goal.is_empty() {
        return Err("persona needs a name and a goal".into());
    }
    let steps_raw = obj
        .get("steps")
        .and_then(Value::as_array)
        .ok_or("test case without steps")?;
    let mut steps = Vec::with_capacity(steps_raw.len());
    for (i, s) in steps_raw.iter().enumerate() {
        let action = str_field(s, &["action", "instruction"]).unwrap_or("").to_string();
        let expected = str_field(s, &["expected", "expected_outcome", "expectation"]).unwrap_or("").to_string();
        steps.push(TestStep { index: i + 1, action, expected });
    }
    let category = str_field(obj, &["category"])
        .and_then(TestCategory::from_label)
        .unwrap_or_default();
    let case = SoapOperaTestCase {
        id: format!("T-{req_id}"),
        requirement_id: req_id.to_string(),
        persona: Persona { name, goal },
        category,
        steps,
    };
    case.validate()?;
    Ok(case)
}

fn single<'a>(items: &'a [Value], what: &str) -> Result<&'a Value, String> {
    match items {
        [one] => Ok(one),
        _ => Err(format!("expected exactly one {what}, got {}", items.len())),
    }
}

// ---- agent ----------------------------------------------------------------

pub struct TestGenerator<'g> {
    gateway: &'g Gateway,
    prompts: Arc<PromptSet>,
    /// Concurrent requirement pipelines during elaboration and test writing.
    pub parallelism: usize,
}

impl<'g> TestGenerator<'g> {
    pub fn new(gateway: &'g Gateway, prompts: Arc<PromptSet>) -> Self {
        TestGenerator { gateway, prompts, parallelism: 4 }
    }

    fn bundle(&self, request: &UserRequest, text: String, image: bool) -> PromptBundle {
        let mut bundle = PromptBundle::new(
            "You are part of an automated web application development team. Follow the output format exactly.",
            ReplyGrammar::JsonArray,
        )
        .with_text(text);
        if image {
            if let Some(img) = &request.design_image {
                bundle = bundle.with_text("Design image provided by the user:").with_image(img.clone());
            }
        }
        bundle
    }

    pub fn decompose_requirements(&self, request: &UserRequest) -> Result<Vec<Requirement>, TestgenError> {
        request.validate()?;
        let text = self.prompts.render("decompose", &[("description", &request.description)])?;
        let bundle = self.bundle(request, text, true);
        let reqs = self.gateway.complete_json_with(&bundle, |items| decode_requirements(&items))?;
        if reqs.is_empty() {
            return Err(TestgenError::EmptyDecomposition);
        }
        Ok(reqs)
    }

    pub fn elaborate(
        &self,
        req: &Requirement,
        request: &UserRequest,
        siblings: &[Requirement],
    ) -> Result<DetailedRequirement, TestgenError> {
        let listing = siblings
            .iter()
            .map(|r| format!("- [{}] {}", r.id, r.statement))
            .collect::<Vec<_>>()
            .join("\n");
        let target = serde_json::to_string(req).expect("requirement serializes");
        let text = self.prompts.render(
            "elaborate",
            &[("description", &request.description), ("requirements", &listing), ("requirement", &target)],
        )?;
        let bundle = self.bundle(request, text, false);
        Ok(self.gateway.complete_json_with(&bundle, |items| decode_detailed(&items, req))?)
    }

    pub fn generate_test_case(&self, detailed: &DetailedRequirement, req: &Requirement) -> Result<SoapOperaTestCase, TestgenError> {
        let payload = serde_json::json!({ "requirement": req, "detail": detailed });
        let text = self
            .prompts
            .render("testcase", &[("detailed", &serde_json::to_string_pretty(&payload).expect("serializes"))])?;
        let bundle = PromptBundle::new(
            "You are part of an automated web application development team. Follow the output format exactly.",
            ReplyGrammar::JsonArray,
        )
        .with_text(text);
        Ok(self
            .gateway
            .complete_json_with(&bundle, |items| decode_test_case(single(&items, "test case")?, &req.id))?)
    }

    /// Full three-stage pipeline, or the single-shot mode.
    pub fn generate_suite(&self, request: &UserRequest, mode: TestgenMode) -> Result<Suite, TestgenError> {
        request.validate()?;
        let suite = match mode {
            TestgenMode::MultiStep => self.multi_step(request)?,
            TestgenMode::Straightforward => self.straightforward(request)?,
        };
        suite.validate()?;
        info!(requirements = suite.requirements.len(), tests = suite.tests.len(), ?mode, "suite generated");
        Ok(suite)
    }

    fn multi_step(&self, request: &UserRequest) -> Result<Suite, TestgenError> {
        let requirements = self.decompose_requirements(request).map_err(|e| TestgenError::Stage {
            stage: Stage::Decomposition,
            requirement: None,
            source: Box::new(e),
        })?;
        let per_req = |req: &Requirement| -> Result<(DetailedRequirement, SoapOperaTestCase), TestgenError> {
            let detailed = self.elaborate(req, request, &requirements).map_err(|e| TestgenError::Stage {
                stage: Stage::Elaboration,
                requirement: Some(req.id.clone()),
                source: Box::new(e),
            })?;
            let case = self.generate_test_case(&detailed, req).map_err(|e| TestgenError::Stage {
                stage: Stage::TestCase,
                requirement: Some(req.id.clone()),
                source: Box::new(e),
            })?;
            Ok((detailed, case))
        };
        let results = run_bounded(&requirements, self.parallelism.max(1), per_req);
        let mut detailed = Vec::with_capacity(requirements.len());
        let mut tests = Vec::with_capacity(requirements.len());
        for r in results {
            let (d, t) = r?;
            detailed.push(d);
            tests.push(t);
        }
        Ok(Suite {
            schema_version: SUITE_SCHEMA_VERSION,
            mode: TestgenMode::MultiStep,
            request: request.description.clone(),
            requirements,
            detailed,
            tests,
        })
    }

    fn straightforward(&self, request: &UserRequest) -> Result<Suite, TestgenError> {
        let text = self.prompts.render("straightforward", &[("description", &request.description)])?;
        let bundle = self.bundle(request, text, true);
        let decode = |items: Vec<Value>| -> Result<(Vec<Requirement>, Vec<SoapOperaTestCase>), String> {
            let reqs = decode_requirements(&items)?;
            let mut tests = Vec::with_capacity(reqs.len());
            for (item, req) in items.iter().zip(&reqs) {
                let case = item.get("test_case").ok_or_else(|| format!("{} has no test_case", req.id))?;
                tests.push(decode_test_case(case, &req.id)?);
            }
            Ok((reqs, tests))
        };
        let (requirements, tests) = self
            .gateway
            .complete_json_with(&bundle, decode)
            .map_err(|e| TestgenError::Stage {
                stage: Stage::Straightforward,
                requirement: None,
                source: Box::new(e.into()),
            })?;
        if requirements.is_empty() {
            return Err(TestgenError::Stage {
                stage: Stage::Straightforward,
                requirement: None,
                source: Box::new(TestgenError::EmptyDecomposition),
            });
        }
        Ok(Suite {
            schema_version: SUITE_SCHEMA_VERSION,
            mode: TestgenMode::Straightforward,
            request: request.description.clone(),
            requirements,
            detailed: Vec::new(),
            tests,
        })
    }
}

/// Map `f` over `items` with at most `workers` threads, preserving order.
pub(crate) fn run_bounded<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("slots lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("slots lock")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}
