//! The testing agent: launch the app, verify the deployment, walk each
//! soap-opera test through a browser driver steered by model decisions, and
//! fold the outcomes into feedback for the next development round.

pub mod driver;
pub mod supervisor;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{info, warn};

pub use driver::{BrowserDriver, BrowserSession, CdpDriver, DriverError, HttpDriver, PageSnapshot};
pub use supervisor::{launch, AppInstance, InstanceState, LaunchError, LaunchFailure, PortAllocator, SupervisorConfig};

use crate::gateway::{Gateway, GatewayError, PromptBundle, Raster, ReplyGrammar};
use crate::prompts::PromptSet;
use crate::testgen::{SoapOperaTestCase, TestCategory, TestStep};
use crate::workspace::WorkspaceState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureSignal {
    BlankScreen,
    CrashOverlay,
    ProbeTimeout,
    ProcessExit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentVerdict {
    pub ok: bool,
    /// sha256 of the start-page screenshot, when one was captured.
    pub screenshot: Option<String>,
    pub signals: Vec<FailureSignal>,
    /// Discrepancies against the design image, or logs when the launch failed.
    pub notes: Option<String>,
    #[serde(skip)]
    pub raster: Option<Raster>,
}

impl DeploymentVerdict {
    fn failed(signal: FailureSignal, notes: String) -> Self {
        DeploymentVerdict { ok: false, screenshot: None, signals: vec![signal], notes: Some(notes), raster: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "YES")]
    Yes,
    #[serde(rename = "PARTIAL")]
    Partial,
    #[serde(rename = "NO")]
    No,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Yes => "YES",
            Verdict::Partial => "PARTIAL",
            Verdict::No => "NO",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "YES" => Some(Verdict::Yes),
            "PARTIAL" => Some(Verdict::Partial),
            "NO" => Some(Verdict::No),
            _ => None,
        }
    }

    /// Prefix rule: all met → YES; first step unmet → NO; otherwise PARTIAL.
    pub fn from_steps(verdicts: &[StepVerdict]) -> Self {
        if !verdicts.is_empty() && verdicts.iter().all(|v| *v == StepVerdict::Met) {
            Verdict::Yes
        } else if verdicts.first() != Some(&StepVerdict::Met) {
            Verdict::No
        } else {
            Verdict::Partial
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCategory {
    LaunchFailure,
    ElementNotFound,
    AssertionMismatch,
    NavigationError,
    Timeout,
    AuthWall,
    Other,
}

impl ErrorCategory {
    pub fn from_label(label: &str) -> Self {
        let norm: String = label.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match norm.as_str() {
            "launchfailure" => ErrorCategory::LaunchFailure,
            "elementnotfound" | "missingelement" => ErrorCategory::ElementNotFound,
            "assertionmismatch" | "mismatch" => ErrorCategory::AssertionMismatch,
            "navigationerror" | "navigation" => ErrorCategory::NavigationError,
            "timeout" => ErrorCategory::Timeout,
            "authwall" | "loginwall" | "auth" => ErrorCategory::AuthWall,
            _ => ErrorCategory::Other,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorCategory::LaunchFailure => "launch-failure",
            ErrorCategory::ElementNotFound => "element-not-found",
            ErrorCategory::AssertionMismatch => "assertion-mismatch",
            ErrorCategory::NavigationError => "navigation-error",
            ErrorCategory::Timeout => "timeout",
            ErrorCategory::AuthWall => "auth-wall",
            ErrorCategory::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepVerdict {
    Met,
    Unmet,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum BrowserAction {
    Navigate { path: String },
    Click { selector: String },
    Type { selector: String, text: String },
    Wait { ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutedAction {
    #[serde(flatten)]
    pub action: BrowserAction,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTrace {
    pub index: usize,
    pub actions: Vec<ExecutedAction>,
    pub observed: String,
    pub screenshot: Option<String>,
    pub verdict: StepVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestReport {
    pub test_id: String,
    pub requirement_id: String,
    pub category: TestCategory,
    pub verdict: Verdict,
    pub failed_step: Option<usize>,
    pub failed_action: Option<String>,
    pub expected: String,
    pub actual: String,
    pub error_category: Option<ErrorCategory>,
    pub technical_info: String,
    pub recommendations: Vec<String>,
    pub steps: Vec<StepTrace>,
    /// Model decisions requested while driving this test.
    pub driver_calls: usize,
}

impl TestReport {
    fn launch_failure(test: &SoapOperaTestCase, info: String) -> Self {
        let first = test.steps.first();
        TestReport {
            test_id: test.id.clone(),
            requirement_id: test.requirement_id.clone(),
            category: test.category,
            verdict: Verdict::No,
            failed_step: Some(1),
            failed_action: first.map(|s| s.action.clone()),
            expected: first.map(|s| s.expected.clone()).unwrap_or_default(),
            actual: "the application could not be reached".into(),
            error_category: Some(ErrorCategory::LaunchFailure),
            technical_info: info,
            recommendations: vec!["Make sure the application starts and serves its start page.".into()],
            steps: test
                .steps
                .iter()
                .map(|s| StepTrace {
                    index: s.index,
                    actions: Vec::new(),
                    observed: String::new(),
                    screenshot: None,
                    verdict: if s.index == 1 { StepVerdict::Unmet } else { StepVerdict::Skipped },
                })
                .collect(),
            driver_calls: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCounts {
    pub yes: usize,
    pub partial: usize,
    pub no: usize,
    pub total: usize,
}

impl PassCounts {
    pub fn tally<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> Self {
        let mut c = PassCounts::default();
        for v in verdicts {
            match v {
                Verdict::Yes => c.yes += 1,
                Verdict::Partial => c.partial += 1,
                Verdict::No => c.no += 1,
            }
            c.total += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackBundle {
    pub round: usize,
    pub deployment: DeploymentVerdict,
    pub reports: Vec<TestReport>,
    pub counts: PassCounts,
    pub digest: String,
}

impl FeedbackBundle {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("feedback serializes");
        s.push('\n');
        s
    }
}

fn signal_label(s: FailureSignal) -> &'static str {
    match s {
        FailureSignal::BlankScreen => "blank screen",
        FailureSignal::CrashOverlay => "crash message on screen",
        FailureSignal::ProbeTimeout => "readiness probe timed out",
        FailureSignal::ProcessExit => "process exited",
    }
}

/// Assemble the feedback bundle and its digest for the development prompt.
pub fn build_feedback(reports: Vec<TestReport>, deployment: DeploymentVerdict, round: usize) -> FeedbackBundle {
    let counts = PassCounts::tally(reports.iter().map(|r| &r.verdict));
    let mut digest = String::new();
    if !deployment.ok {
        let signals = deployment.signals.iter().map(|s| signal_label(*s)).collect::<Vec<_>>().join(", ");
        digest.push_str(&format!("Deployment verification failed ({signals}). No tests were executed.\n"));
        if let Some(notes) = deployment.notes.as_deref().filter(|n| !n.trim().is_empty()) {
            digest.push_str("\nLogs and diagnostics:\n");
            digest.push_str(notes.trim_end());
            digest.push('\n');
        }
        return FeedbackBundle { round, deployment, reports, counts, digest };
    }
    if counts.yes == counts.total {
        digest.push_str(&format!("All {} tests passed.\n", counts.total));
    } else {
        digest.push_str(&format!(
            "{} of {} tests passed ({} partial, {} failed). Failures:\n",
            counts.yes, counts.total, counts.partial, counts.no
        ));
        for r in reports.iter().filter(|r| r.verdict != Verdict::Yes) {
            digest.push_str(&format!("\n- {} [{}]", r.test_id, r.verdict.label()));
            match (r.failed_step, r.failed_action.as_deref()) {
                (Some(k), Some(a)) => digest.push_str(&format!(" failed at step {k}: {a}\n")),
                (Some(k), None) => digest.push_str(&format!(" failed at step {k}\n")),
                _ => digest.push('\n'),
            }
            digest.push_str(&format!("  expected: {}\n  actual: {}\n", r.expected, r.actual));
            if let Some(c) = r.error_category {
                digest.push_str(&format!("  category: {}\n", c.label()));
            }
            if !r.technical_info.is_empty() {
                digest.push_str(&format!("  details: {}\n", r.technical_info));
            }
            for rec in &r.recommendations {
                digest.push_str(&format!("  recommendation: {rec}\n"));
            }
        }
    }
    if let Some(notes) = deployment.notes.as_deref().filter(|n| !n.trim().is_empty()) {
        digest.push_str("\nVisual differences from the design image:\n");
        digest.push_str(notes.trim_end());
        digest.push('\n');
    }
    FeedbackBundle { round, deployment, reports, counts, digest }
}

/// True when at least `threshold` of the pixels fall into one color bucket
/// (each channel quantized to 3 bits).
pub fn is_blank(raster: &Raster, threshold: f64) -> bool {
    let Ok(img) = image::load_from_memory(&raster.bytes) else { return false };
    let rgb = img.to_rgb8();
    let total = rgb.pixels().len();
    if total == 0 {
        return true;
    }
    let mut buckets = std::collections::HashMap::new();
    for p in rgb.pixels() {
        *buckets.entry((p[0] >> 5, p[1] >> 5, p[2] >> 5)).or_insert(0usize) += 1;
    }
    let top = buckets.values().copied().max().unwrap_or(0);
    top as f64 / total as f64 >= threshold
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunnerConfig {
    pub parallelism: usize,
    /// Driver actions (model decisions) allowed per step, judgment included.
    pub step_budget: usize,
    /// Retries of a browser action after a transient failure.
    pub retry_bound: usize,
    pub base_port: u16,
    pub blank_threshold: f64,
    pub supervisor: SupervisorConfig,
    #[serde(skip)]
    pub screenshot_dir: Option<PathBuf>,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig {
            parallelism: 4,
            step_budget: 15,
            retry_bound: 2,
            base_port: 4100,
            blank_threshold: 0.995,
            supervisor: SupervisorConfig::default(),
            screenshot_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Decision {
    Act(BrowserAction),
    Judge { met: bool, observation: String, category: Option<ErrorCategory>, recommendation: Option<String> },
}

fn decode_decision(items: Vec<Value>, allow_actions: bool) -> Result<Decision, String> {
    let obj = match items.as_slice() {
        [one] => one,
        _ => return Err(format!("expected exactly one action object, got {}", items.len())),
    };
    let field = |k: &str| obj.get(k).and_then(Value::as_str).map(str::trim).unwrap_or("").to_string();
    let action = field("action").to_ascii_lowercase();
    if action != "judge" && !allow_actions {
        return Err("only a judge action is allowed now".into());
    }
    let need = |k: &str| {
        let v = field(k);
        if v.is_empty() {
            Err(format!("{action} action needs a non-empty {k}"))
        } else {
            Ok(v)
        }
    };
    Ok(match action.as_str() {
        "navigate" => Decision::Act(BrowserAction::Navigate { path: need("path")? }),
        "click" => Decision::Act(BrowserAction::Click { selector: need("selector")? }),
        "type" => Decision::Act(BrowserAction::Type { selector: need("selector")?, text: field("text") }),
        "wait" => Decision::Act(BrowserAction::Wait { ms: obj.get("ms").and_then(Value::as_u64).unwrap_or(500) }),
        "judge" => {
            let met = match field("verdict").to_ascii_lowercase().as_str() {
                "met" | "yes" | "pass" | "passed" => true,
                "unmet" | "no" | "fail" | "failed" => false,
                other => return Err(format!("verdict must be met or unmet, got {other:?}")),
            };
            let category = Some(field("category")).filter(|c| !c.is_empty()).map(|c| ErrorCategory::from_label(&c));
            let recommendation = Some(field("recommendation")).filter(|r| !r.is_empty());
            Decision::Judge { met, observation: field("observation"), category, recommendation }
        }
        other => return Err(format!("unknown action {other:?}")),
    })
}

fn describe(action: &BrowserAction) -> String {
    match action {
        BrowserAction::Navigate { path } => format!("navigate {path}"),
        BrowserAction::Click { selector } => format!("click {selector}"),
        BrowserAction::Type { selector, text } => format!("type {text:?} into {selector}"),
        BrowserAction::Wait { ms } => format!("wait {ms}ms"),
    }
}

fn category_for(e: &DriverError) -> ErrorCategory {
    match e {
        DriverError::ElementNotFound(_) => ErrorCategory::ElementNotFound,
        DriverError::Navigation(_) => ErrorCategory::NavigationError,
        DriverError::Transient(_) => ErrorCategory::Timeout,
        DriverError::Fatal(_) => ErrorCategory::Other,
    }
}

/// Result of one suite execution, with host details kept out of the bundle.
#[derive(Debug, Clone)]
pub struct SuiteExecution {
    pub feedback: FeedbackBundle,
    /// Ports of every instance launched for this run.
    pub ports: Vec<u16>,
    pub pids: Vec<u32>,
    /// Number of tests actually driven.
    pub executions: usize,
}

struct StepFailure {
    index: usize,
    action: String,
    actual: String,
    category: Option<ErrorCategory>,
    recommendation: Option<String>,
}

pub struct TestingAgent<'g> {
    gateway: &'g Gateway,
    prompts: Arc<PromptSet>,
    driver: Arc<dyn BrowserDriver>,
    ports: Arc<PortAllocator>,
    config: RunnerConfig,
}

const TESTER_SYSTEM: &str = "You are a meticulous QA tester operating a web browser. Follow the output format exactly.";

impl<'g> TestingAgent<'g> {
    pub fn new(gateway: &'g Gateway, prompts: Arc<PromptSet>, driver: Arc<dyn BrowserDriver>, config: RunnerConfig) -> Self {
        let ports = Arc::new(PortAllocator::new(config.base_port));
        TestingAgent { gateway, prompts, driver, ports, config }
    }

    pub fn config(&self) -> &RunnerConfig {
        &self.config
    }

    pub fn ports(&self) -> &Arc<PortAllocator> {
        &self.ports
    }

    pub fn launch(&self, ws: &WorkspaceState, requested: Option<u16>) -> Result<AppInstance, LaunchError> {
        launch(ws.template(), ws.root(), requested, &self.ports, &self.config.supervisor)
    }

    fn with_retries<T>(&self, mut f: impl FnMut() -> Result<T, DriverError>) -> Result<T, DriverError> {
        let mut attempt = 0;
        loop {
            match f() {
                Err(e) if e.is_transient() && attempt < self.config.retry_bound => {
                    attempt += 1;
                    std::thread::sleep(Duration::from_millis(100 * attempt as u64));
                }
                other => return other,
            }
        }
    }

    /// Screenshot-based health check of a launched instance. Only fatal
    /// gateway failures are returned as errors.
    pub fn verify_deployment(&self, inst: &AppInstance, expected: Option<&Raster>) -> Result<DeploymentVerdict, GatewayError> {
        if inst.state() != InstanceState::Ready {
            let signal = match inst.failure() {
                Some(LaunchFailure::ProbeTimeout) => FailureSignal::ProbeTimeout,
                _ => FailureSignal::ProcessExit,
            };
            let logs = inst.sanitized_logs();
            let notes = if logs.trim().is_empty() { "the process produced no output".to_string() } else { logs };
            return Ok(DeploymentVerdict::failed(signal, notes));
        }
        let captured = self.with_retries(|| {
            let mut session = self.driver.open(inst.base_url())?;
            session.navigate("/")?;
            Ok((session.snapshot()?, session.screenshot()?))
        });
        let (page, shot) = match captured {
            Ok(v) => v,
            Err(e) => return Ok(DeploymentVerdict::failed(FailureSignal::ProbeTimeout, format!("could not capture the start page: {e}"))),
        };
        let mut signals = Vec::new();
        if is_blank(&shot, self.config.blank_threshold) {
            signals.push(FailureSignal::BlankScreen);
        } else if self.crash_visible(&page, &shot)? {
            signals.push(FailureSignal::CrashOverlay);
        }
        let notes = match expected {
            Some(design) if signals.is_empty() => self.discrepancies(&shot, design)?,
            _ => None,
        };
        Ok(DeploymentVerdict { ok: signals.is_empty(), screenshot: Some(shot.digest()), signals, notes, raster: Some(shot) })
    }

    fn crash_visible(&self, page: &PageSnapshot, shot: &Raster) -> Result<bool, GatewayError> {
        let text = self.prompts.render("crash_check", &[("page_text", page.text.trim())]).map_err(prompt_err)?;
        let bundle = PromptBundle::new(TESTER_SYSTEM, ReplyGrammar::FreeText).with_text(text).with_image(shot.clone());
        let answer = self.gateway.complete_with(&bundle, |raw| {
            let first = raw.trim().lines().next().unwrap_or("").trim().to_ascii_uppercase();
            if first.starts_with("YES") {
                Ok(true)
            } else if first.starts_with("NO") {
                Ok(false)
            } else {
                Err("the first line must be YES or NO".into())
            }
        });
        match answer {
            Ok(v) => Ok(v),
            Err(e) if e.is_fatal() => Err(e),
            Err(e) => {
                warn!(error = %e, "crash check unanswered; assuming no crash");
                Ok(false)
            }
        }
    }

    fn discrepancies(&self, shot: &Raster, design: &Raster) -> Result<Option<String>, GatewayError> {
        if shot == design {
            return Ok(None);
        }
        let text = self.prompts.render("visual_diff", &[]).map_err(prompt_err)?;
        let bundle = PromptBundle::new(TESTER_SYSTEM, ReplyGrammar::FreeText)
            .with_text(text)
            .with_image(shot.clone())
            .with_image(design.clone());
        let reply = self.gateway.complete(&bundle)?;
        let body = crate::workspace::clean_artifact_text(&reply.raw).trim().to_string();
        if body.is_empty() || body.eq_ignore_ascii_case("none") {
            Ok(None)
        } else {
            Ok(Some(body))
        }
    }

    fn screenshot_ref(&self, test: &SoapOperaTestCase, step: usize, shot: &Raster) -> Option<String> {
        let dir = self.config.screenshot_dir.as_ref()?;
        let rel = format!("{}/step-{step}.png", test.id);
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).ok()?;
        }
        std::fs::write(&path, &shot.bytes).ok()?;
        Some(rel)
    }

    fn decide(&self, test: &SoapOperaTestCase, step: &TestStep, history: &[String], page: &PageSnapshot, forced: bool) -> Result<Result<Decision, String>, GatewayError> {
        let history = if history.is_empty() { "(none yet)".to_string() } else { history.join("\n") };
        let page = page.render();
        let index = step.index.to_string();
        let count = test.steps.len().to_string();
        let text = if forced {
            self.prompts.render(
                "driver_decision",
                &[
                    ("persona_name", &test.persona.name),
                    ("step_index", &index),
                    ("step_action", &step.action),
                    ("step_expected", &step.expected),
                    ("history", &history),
                    ("page", &page),
                ],
            )
        } else {
            self.prompts.render(
                "driver_step",
                &[
                    ("persona_name", &test.persona.name),
                    ("persona_goal", &test.persona.goal),
                    ("step_index", &index),
                    ("step_count", &count),
                    ("step_action", &step.action),
                    ("step_expected", &step.expected),
                    ("history", &history),
                    ("page", &page),
                ],
            )
        }
        .map_err(prompt_err)?;
        let bundle = PromptBundle::new(TESTER_SYSTEM, ReplyGrammar::JsonArray).with_text(text);
        match self.gateway.complete_json_with(&bundle, |items| decode_decision(items, !forced)) {
            Ok(d) => Ok(Ok(d)),
            Err(e) if e.is_fatal() => Err(e),
            Err(e) => Ok(Err(e.to_string())),
        }
    }

    /// Drive one test case. Every failure short of a fatal gateway error is
    /// folded into the report.
    pub fn run_test(&self, inst: &AppInstance, test: &SoapOperaTestCase, budget: usize) -> Result<TestReport, GatewayError> {
        if inst.state() != InstanceState::Ready {
            return Ok(TestReport::launch_failure(test, inst.sanitized_logs()));
        }
        let budget = budget.max(1);
        let mut session = match self.with_retries(|| {
            let mut s = self.driver.open(inst.base_url())?;
            s.navigate("/")?;
            Ok(s)
        }) {
            Ok(s) => s,
            Err(e) => return Ok(TestReport::launch_failure(test, e.to_string())),
        };
        let mut traces: Vec<StepTrace> = Vec::with_capacity(test.steps.len());
        let mut failure: Option<StepFailure> = None;
        let mut technical = Vec::new();
        let mut calls = 0usize;
        for step in &test.steps {
            if failure.is_some() {
                traces.push(StepTrace { index: step.index, actions: Vec::new(), observed: String::new(), screenshot: None, verdict: StepVerdict::Skipped });
                continue;
            }
            let mut history: Vec<String> = Vec::new();
            let mut executed: Vec<ExecutedAction> = Vec::new();
            let mut last_error: Option<DriverError> = None;
            let mut used = 0usize;
            let outcome = loop {
                let page = match self.with_retries(|| session.snapshot()) {
                    Ok(p) => p,
                    Err(e) => break Decision::Judge { met: false, observation: format!("page unavailable: {e}"), category: Some(category_for(&e)), recommendation: None },
                };
                let forced = used + 1 >= budget;
                used += 1;
                calls += 1;
                match self.decide(test, step, &history, &page, forced)? {
                    Err(msg) => {
                        technical.push(format!("step {}: tester reply unusable: {msg}", step.index));
                        break Decision::Judge { met: false, observation: "the tester could not reach a decision".into(), category: Some(ErrorCategory::Other), recommendation: None };
                    }
                    Ok(judge @ Decision::Judge { .. }) => break judge,
                    Ok(Decision::Act(action)) => {
                        let result = self.with_retries(|| match &action {
                            BrowserAction::Navigate { path } => session.navigate(path),
                            BrowserAction::Click { selector } => session.click(selector),
                            BrowserAction::Type { selector, text } => session.type_text(selector, text),
                            BrowserAction::Wait { ms } => {
                                session.wait(*ms);
                                Ok(())
                            }
                        });
                        let outcome = match &result {
                            Ok(()) => "ok".to_string(),
                            Err(e) => e.to_string(),
                        };
                        history.push(format!("{}. {} -> {}", history.len() + 1, describe(&action), outcome));
                        executed.push(ExecutedAction { action, outcome });
                        last_error = result.err();
                    }
                }
            };
            let shot = self.with_retries(|| session.screenshot()).ok();
            let screenshot = shot.as_ref().and_then(|s| self.screenshot_ref(test, step.index, s));
            let Decision::Judge { met, observation, category, recommendation } = outcome else { unreachable!() };
            if met {
                traces.push(StepTrace { index: step.index, actions: executed, observed: observation, screenshot, verdict: StepVerdict::Met });
            } else {
                let category = category.or_else(|| last_error.as_ref().map(category_for)).unwrap_or(ErrorCategory::AssertionMismatch);
                if let Some(e) = &last_error {
                    technical.push(format!("step {}: last browser error: {e}", step.index));
                }
                failure = Some(StepFailure { index: step.index, action: step.action.clone(), actual: observation.clone(), category: Some(category), recommendation });
                traces.push(StepTrace { index: step.index, actions: executed, observed: observation, screenshot, verdict: StepVerdict::Unmet });
            }
        }
        let verdict = Verdict::from_steps(&traces.iter().map(|t| t.verdict).collect::<Vec<_>>());
        let mut report = TestReport {
            test_id: test.id.clone(),
            requirement_id: test.requirement_id.clone(),
            category: test.category,
            verdict,
            failed_step: None,
            failed_action: None,
            expected: String::new(),
            actual: String::new(),
            error_category: None,
            technical_info: technical.join("\n"),
            recommendations: Vec::new(),
            steps: traces,
            driver_calls: calls,
        };
        if let Some(StepFailure { index, action, actual, category, recommendation }) = failure {
            report.failed_step = Some(index);
            report.failed_action = Some(action);
            report.expected = test.steps[index - 1].expected.clone();
            report.actual = actual;
            report.error_category = category;
            report.recommendations = recommendation.into_iter().collect();
        }
        Ok(report)
    }

    /// Launch, verify, then run every test on a pool of instances. A failed
    /// deployment aborts before any test is driven.
    pub fn run_suite(&self, ws: &WorkspaceState, tests: &[SoapOperaTestCase], round: usize, design: Option<&Raster>) -> Result<SuiteExecution, GatewayError> {
        let workers = self.config.parallelism.max(1).min(tests.len().max(1));
        let install_timeout = Duration::from_secs(self.config.supervisor.install_timeout_secs);
        if let Err(logs) = supervisor::run_install(ws.template(), ws.root(), install_timeout) {
            let verdict = DeploymentVerdict::failed(FailureSignal::ProcessExit, logs);
            return Ok(SuiteExecution { feedback: build_feedback(Vec::new(), verdict, round), ports: Vec::new(), pids: Vec::new(), executions: 0 });
        }
        let mut instances: Vec<AppInstance> = Vec::with_capacity(workers);
        let first = match self.launch(ws, Some(self.config.base_port)) {
            Ok(inst) => inst,
            Err(e) => {
                let verdict = self.verify_deployment(&e.instance, design)?;
                info!(round, "deployment failed: {}", e.failure_label());
                let ports = vec![e.instance.port()].into_iter().filter(|p| *p != 0).collect();
                let pids = e.instance.pid().into_iter().collect();
                return Ok(SuiteExecution { feedback: build_feedback(Vec::new(), verdict, round), ports, pids, executions: 0 });
            }
        };
        let verdict = self.verify_deployment(&first, design)?;
        let mut ports = vec![first.port()];
        let mut pids: Vec<u32> = first.pid().into_iter().collect();
        instances.push(first);
        if !verdict.ok {
            drop(instances);
            return Ok(SuiteExecution { feedback: build_feedback(Vec::new(), verdict, round), ports, pids, executions: 0 });
        }
        for _ in 1..workers {
            let next = ports.last().copied().unwrap_or(self.config.base_port).saturating_add(1);
            match self.launch(ws, Some(next)) {
                Ok(inst) => {
                    ports.push(inst.port());
                    pids.extend(inst.pid());
                    instances.push(inst);
                }
                Err(e) => warn!(error = %e, "extra instance failed to start; continuing with fewer workers"),
            }
        }
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let fatal: Mutex<Option<GatewayError>> = Mutex::new(None);
        let slots: Mutex<Vec<Option<TestReport>>> = Mutex::new(vec![None; tests.len()]);
        let executions = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for inst in &instances {
                scope.spawn(|| loop {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(test) = tests.get(i) else { break };
                    executions.fetch_add(1, Ordering::SeqCst);
                    match self.run_test(inst, test, self.config.step_budget) {
                        Ok(report) => slots.lock().expect("slots lock")[i] = Some(report),
                        Err(e) => {
                            stop.store(true, Ordering::SeqCst);
                            fatal.lock().expect("fatal lock").get_or_insert(e);
                        }
                    }
                });
            }
        });
        for mut inst in instances {
            inst.stop();
        }
        if let Some(e) = fatal.into_inner().expect("fatal lock") {
            return Err(e);
        }
        let reports: Vec<TestReport> = slots.into_inner().expect("slots lock").into_iter().flatten().collect();
        Ok(SuiteExecution { feedback: build_feedback(reports, verdict, round), ports, pids, executions: executions.into_inner() })
    }
}

impl LaunchError {
    pub fn failure_label(&self) -> &'static str {
        match self.failure {
            LaunchFailure::ProbeTimeout => "probe-timeout",
            LaunchFailure::ProcessExited => "process-exit",
            LaunchFailure::SpawnFailed => "spawn-failed",
            LaunchFailure::NoFreePort => "no-free-port",
        }
    }
}

fn prompt_err(e: crate::prompts::PromptError) -> GatewayError {
    GatewayError::InvalidBundle(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn report(id: &str, verdict: Verdict, step: Option<usize>) -> TestReport {
        TestReport {
            test_id: id.into(),
            requirement_id: id.trim_start_matches("T-").into(),
            category: TestCategory::Functionality,
            verdict,
            failed_step: step,
            failed_action: step.map(|k| format!("action {k}")),
            expected: "exp".into(),
            actual: "act".into(),
            error_category: step.map(|_| ErrorCategory::ElementNotFound),
            technical_info: String::new(),
            recommendations: vec!["fix it".into()],
            steps: Vec::new(),
            driver_calls: 0,
        }
    }

    fn ok_deploy() -> DeploymentVerdict {
        DeploymentVerdict { ok: true, screenshot: None, signals: vec![], notes: None, raster: None }
    }

    #[test]
    fn prefix_rule() {
        use StepVerdict::*;
        assert_eq!(Verdict::from_steps(&[Met, Met, Met]), Verdict::Yes);
        assert_eq!(Verdict::from_steps(&[Met, Unmet, Skipped]), Verdict::Partial);
        assert_eq!(Verdict::from_steps(&[Unmet, Skipped]), Verdict::No);
        assert_eq!(Verdict::from_steps(&[]), Verdict::No);
    }

    #[test]
    fn all_pass_digest_has_no_failures() {
        let fb = build_feedback(vec![report("T-R1", Verdict::Yes, None), report("T-R2", Verdict::Yes, None)], ok_deploy(), 1);
        assert_eq!(fb.digest, "All 2 tests passed.\n");
        assert_eq!(fb.counts, PassCounts { yes: 2, partial: 0, no: 0, total: 2 });
    }

    #[test]
    fn digest_names_each_failure_once() {
        let fb = build_feedback(
            vec![report("T-R1", Verdict::Yes, None), report("T-R2", Verdict::No, Some(1)), report("T-R3", Verdict::Partial, Some(2))],
            ok_deploy(),
            2,
        );
        assert_eq!(fb.digest.matches("T-R2").count(), 1);
        assert_eq!(fb.digest.matches("T-R3").count(), 1);
        assert!(!fb.digest.contains("T-R1"));
        assert!(fb.digest.contains("failed at step 1: action 1"));
        assert!(fb.digest.contains("category: element-not-found"));
        assert_eq!(fb.counts, PassCounts { yes: 1, partial: 1, no: 1, total: 3 });
    }

    #[test]
    fn failed_deployment_digest_carries_logs() {
        let fb = build_feedback(Vec::new(), DeploymentVerdict::failed(FailureSignal::ProcessExit, "boom".into()), 0);
        assert!(fb.digest.contains("No tests were executed"));
        assert!(fb.digest.contains("boom"));
        assert_eq!(fb.counts.total, 0);
    }

    #[test]
    fn blank_detection_uses_dominant_bucket() {
        assert!(is_blank(&driver::synthetic_render(""), 0.995));
        let text = "x".repeat(2000);
        assert!(!is_blank(&driver::synthetic_render(&text), 0.995));
    }

    #[test]
    fn decisions_decode() {
        assert_eq!(
            decode_decision(vec![json!({"action": "click", "selector": "#go"})], true).unwrap(),
            Decision::Act(BrowserAction::Click { selector: "#go".into() })
        );
        assert!(decode_decision(vec![json!({"action": "click", "selector": "#go"})], false).is_err());
        assert!(decode_decision(vec![json!({"action": "click"})], true).is_err());
        let judged = decode_decision(vec![json!({"action": "judge", "verdict": "unmet", "category": "Element not found"})], false).unwrap();
        assert!(matches!(judged, Decision::Judge { met: false, category: Some(ErrorCategory::ElementNotFound), .. }));
        assert!(decode_decision(vec![json!({"action": "judge", "verdict": "maybe"})], true).is_err());
    }
}
