//! The refinement loop: generate tests, develop, test, feed back, repeat.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::devagent::{DevAgent, DevAgentError, DevConfig, DevTask, StepSummary};
use crate::gateway::{CassetteMode, Gateway, GatewayError, ProviderConfig};
use crate::journal::Journal;
use crate::prompts::PromptSet;
use crate::testgen::{Suite, TestGenerator, TestgenError, TestgenMode, UserRequest};
use crate::testrunner::{BrowserDriver, FeedbackBundle, RunnerConfig, TestingAgent};
use crate::workspace::{TemplateStore, WorkspaceError, WorkspaceState};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Feedback rounds; 0 runs a single development step with testing disabled.
    pub max_iter: usize,
    pub testgen_mode: TestgenMode,
    pub runner: RunnerConfig,
    pub dev: DevConfig,
    pub provider: ProviderConfig,
    pub cassette_mode: CassetteMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_iter: 3,
            testgen_mode: TestgenMode::MultiStep,
            runner: RunnerConfig::default(),
            dev: DevConfig::default(),
            provider: ProviderConfig::default(),
            cassette_mode: CassetteMode::Passthrough,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.runner.parallelism == 0 {
            return Err(PipelineError::InvalidConfig("parallelism must be at least 1".into()));
        }
        if self.runner.step_budget == 0 {
            return Err(PipelineError::InvalidConfig("step budget must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.runner.blank_threshold) {
            return Err(PipelineError::InvalidConfig("blank threshold must lie in [0, 1]".into()));
        }
        self.provider.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Testgen(#[from] TestgenError),
    #[error(transparent)]
    Dev(#[from] DevAgentError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl PipelineError {
    /// The model provider (or cassette) is at fault.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            PipelineError::Gateway(_) => true,
            PipelineError::Testgen(e) => e.gateway_error().is_some(),
            PipelineError::Dev(DevAgentError::Gateway(_)) => true,
            _ => false,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub tree_hash: String,
    /// Absent for a round whose output was never tested.
    pub feedback: Option<FeedbackBundle>,
    pub tdd_pass_rate: Option<f64>,
    pub unproductive: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineResult {
    pub selected_round: usize,
    pub records: Vec<RoundRecord>,
    pub final_workspace: PathBuf,
    pub selected_tree: PathBuf,
    pub suite: Suite,
    pub journal: PathBuf,
    pub template: String,
    pub develop_steps: usize,
    pub suite_runs: usize,
    pub test_executions: usize,
    /// Pids of every application process launched during the run.
    #[serde(skip)]
    pub pids: Vec<u32>,
    #[serde(skip)]
    pub ports: Vec<Vec<u16>>,
}

/// Fraction of tests with verdict YES; 0 when nothing ran.
pub fn tdd_pass_rate<F: Float + FromPrimitive>(bundle: &FeedbackBundle) -> F {
    if bundle.counts.total == 0 {
        return F::zero();
    }
    F::from_usize(bundle.counts.yes).expect("count representable") / F::from_usize(bundle.counts.total).expect("count representable")
}

/// Index of the best rate; ties go to the latest round.
pub fn argmax_latest<F: PartialOrd + Copy>(rates: &[F]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rates.iter().enumerate() {
        match best {
            Some(b) if rates[b] > *r => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Best tested round by pass rate (latest wins ties). Untested rounds are
/// only chosen when nothing was tested, in which case the latest is returned.
pub fn select_best_round(records: &[RoundRecord]) -> Option<&RoundRecord> {
    let tested: Vec<&RoundRecord> = records.iter().filter(|r| r.tdd_pass_rate.is_some()).collect();
    if tested.is_empty() {
        return records.last();
    }
    let rates: Vec<f64> = tested.iter().map(|r| r.tdd_pass_rate.unwrap_or(0.0)).collect();
    argmax_latest(&rates).map(|i| tested[i])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum ProgressEvent {
    SuiteGenerated { requirements: usize, tests: usize, mode: TestgenMode },
    TemplateSelected { template: String },
    DevelopStep { round: usize, applied: usize, skipped: usize, rejected: usize, unproductive: bool },
    SuiteRun { round: usize, deployment_ok: bool, yes: usize, partial: usize, no: usize, total: usize },
    EarlyStop { round: usize },
    Selected { round: usize, tdd_pass_rate: Option<f64> },
}

pub struct PipelineEnv<'a> {
    pub gateway: &'a Gateway,
    pub driver: Arc<dyn BrowserDriver>,
    pub store: &'a TemplateStore,
    pub prompts: Arc<PromptSet>,
    pub progress: &'a (dyn Fn(&ProgressEvent) + Sync),
}

/// Paths inside a run directory.
pub mod layout {
    pub const REQUEST: &str = "request.txt";
    pub const CONFIG: &str = "config.json";
    pub const SUITE: &str = "suite.json";
    pub const WORKSPACE: &str = "workspace";
    pub const ROUNDS: &str = "rounds";
    pub const JOURNAL: &str = "journal.jsonl";
    pub const SELECTED: &str = "selected";
    pub const RESULT: &str = "result.json";
    pub const FEEDBACK: &str = "feedback.json";
    pub const STEP: &str = "step.json";
    pub const TREE_HASH: &str = "tree-hash";
    pub const TREE: &str = "tree";
    pub const SCREENSHOTS: &str = "screenshots";

    pub fn round_dir(k: usize) -> String {
        format!("{ROUNDS}/round-{k}")
    }
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn initial_instruction(request: &UserRequest, suite: &Suite) -> String {
    format!(
        "Build the application described below.\n\nUser request:\n{}\n\nRequirements:\n{}",
        request.description.trim(),
        suite.requirement_list()
    )
}

fn feedback_instruction(request: &UserRequest, feedback: &FeedbackBundle) -> String {
    format!(
        "User request:\n{}\n\nThe application was launched and tested. Fix the problems reported below without breaking what already works.\n\nTest feedback:\n{}",
        request.description.trim(),
        feedback.digest.trim_end()
    )
}

/// Run the full pipeline into `run_dir`, which must be empty or absent.
pub fn run_pipeline(request: &UserRequest, config: &PipelineConfig, env: &PipelineEnv<'_>, run_dir: &Path) -> Result<PipelineResult, PipelineError> {
    config.validate()?;
    request.validate()?;
    if run_dir.exists() && std::fs::read_dir(run_dir).map_err(|e| io_err(run_dir, e))?.next().is_some() {
        return Err(PipelineError::Io { path: run_dir.display().to_string(), message: "run directory is not empty".into() });
    }
    std::fs::create_dir_all(run_dir).map_err(|e| io_err(run_dir, e))?;
    write(&run_dir.join(layout::REQUEST), &request.description)?;
    write(&run_dir.join(layout::CONFIG), &pretty(config))?;
    let journal = Arc::new(Journal::create(&run_dir.join(layout::JOURNAL)).map_err(|e| io_err(run_dir, e))?);

    let outcome = run_rounds(request, config, env, run_dir, &journal);
    if let Err(e) = &outcome {
        journal.record("aborted", &serde_json::json!({ "error": e.to_string() }));
    }
    outcome
}

fn run_rounds(request: &UserRequest, config: &PipelineConfig, env: &PipelineEnv<'_>, run_dir: &Path, journal: &Arc<Journal>) -> Result<PipelineResult, PipelineError> {
    let mut generator = TestGenerator::new(env.gateway, env.prompts.clone());
    generator.parallelism = config.runner.parallelism;
    let suite = generator.generate_suite(request, config.testgen_mode)?;
    suite.write(&run_dir.join(layout::SUITE))?;
    journal.record("suite", &serde_json::json!({ "requirements": suite.requirements.len(), "tests": suite.tests.len(), "mode": suite.mode }));
    (env.progress)(&ProgressEvent::SuiteGenerated { requirements: suite.requirements.len(), tests: suite.tests.len(), mode: suite.mode });

    let dev = DevAgent::new(env.gateway, env.prompts.clone(), config.dev.clone());
    let template = dev.select_template(request, env.store.templates())?;
    journal.record("template", &serde_json::json!({ "id": template.id }));
    (env.progress)(&ProgressEvent::TemplateSelected { template: template.id.clone() });
    let mut ws = WorkspaceState::init_from_template(&template, &run_dir.join(layout::WORKSPACE))?.with_journal(journal.clone());

    let mut runner_config = config.runner.clone();
    let tester_for = |round: usize, cfg: &mut RunnerConfig| {
        cfg.screenshot_dir = Some(run_dir.join(layout::round_dir(round)).join(layout::SCREENSHOTS));
        TestingAgent::new(env.gateway, env.prompts.clone(), env.driver.clone(), cfg.clone())
    };

    let mut records: Vec<RoundRecord> = Vec::new();
    let mut develop_steps = 0usize;
    let mut suite_runs = 0usize;
    let mut executions = 0usize;
    let mut pids = Vec::new();
    let mut ports = Vec::new();

    let develop = |ws: &mut WorkspaceState, task: &DevTask, steps: &mut usize| -> Result<StepSummary, PipelineError> {
        let step = dev.develop_step(ws, task)?;
        *steps += 1;
        journal.record("develop", &step);
        let dir = run_dir.join(layout::round_dir(task.round));
        write(&dir.join(layout::STEP), &pretty(&step))?;
        write(&dir.join(layout::TREE_HASH), &format!("{}\n", ws.tree_hash()))?;
        ws.export_tree(&dir.join(layout::TREE))?;
        (env.progress)(&ProgressEvent::DevelopStep {
            round: task.round,
            applied: step.applied.len(),
            skipped: step.skipped.len(),
            rejected: step.rejected.len(),
            unproductive: step.unproductive,
        });
        Ok(step)
    };

    let mut task = DevTask::new(initial_instruction(request, &suite), 0);
    task.design_image = request.design_image.clone();
    let mut step = develop(&mut ws, &task, &mut develop_steps)?;

    for round in 0..config.max_iter {
        let tester = tester_for(round, &mut runner_config);
        let run = tester.run_suite(&ws, &suite.tests, round, request.design_image.as_ref())?;
        suite_runs += 1;
        executions += run.executions;
        pids.extend(run.pids.iter().copied());
        ports.push(run.ports.clone());
        let feedback = run.feedback;
        let rate: f64 = tdd_pass_rate(&feedback);
        write(&run_dir.join(layout::round_dir(round)).join(layout::FEEDBACK), &feedback.to_json())?;
        journal.record("feedback", &serde_json::json!({ "round": round, "counts": feedback.counts, "deployment_ok": feedback.deployment.ok }));
        (env.progress)(&ProgressEvent::SuiteRun {
            round,
            deployment_ok: feedback.deployment.ok,
            yes: feedback.counts.yes,
            partial: feedback.counts.partial,
            no: feedback.counts.no,
            total: feedback.counts.total,
        });
        let instruction = feedback_instruction(request, &feedback);
        records.push(RoundRecord { round, tree_hash: ws.tree_hash(), feedback: Some(feedback), tdd_pass_rate: Some(rate), unproductive: step.unproductive });
        if rate >= 1.0 {
            info!(round, "all tests pass; stopping early");
            journal.record("early-stop", &serde_json::json!({ "round": round }));
            (env.progress)(&ProgressEvent::EarlyStop { round });
            break;
        }
        let mut next = DevTask::new(instruction, round + 1);
        next.design_image = request.design_image.clone();
        step = develop(&mut ws, &next, &mut develop_steps)?;
        task = next;
    }
    // The last development step is untested when the loop ran out of rounds.
    if records.last().map(|r| r.round) != Some(task.round) {
        records.push(RoundRecord { round: task.round, tree_hash: ws.tree_hash(), feedback: None, tdd_pass_rate: None, unproductive: step.unproductive });
    }

    let selected = select_best_round(&records).expect("at least one round").clone();
    let selected_tree = run_dir.join(layout::SELECTED);
    copy_dir(&run_dir.join(layout::round_dir(selected.round)).join(layout::TREE), &selected_tree)?;
    journal.record("selected", &serde_json::json!({ "round": selected.round, "tdd_pass_rate": selected.tdd_pass_rate }));
    (env.progress)(&ProgressEvent::Selected { round: selected.round, tdd_pass_rate: selected.tdd_pass_rate });

    let result = PipelineResult {
        selected_round: selected.round,
        records,
        final_workspace: PathBuf::from(layout::WORKSPACE),
        selected_tree: PathBuf::from(layout::SELECTED),
        suite,
        journal: PathBuf::from(layout::JOURNAL),
        template: template.id.clone(),
        develop_steps,
        suite_runs,
        test_executions: executions,
        pids,
        ports,
    };
    write(&run_dir.join(layout::RESULT), &pretty(&result))?;
    Ok(result)
}

fn copy_dir(src: &Path, dest: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dest).map_err(|e| io_err(dest, e))?;
    for entry in walkdir::WalkDir::new(src).sort_by_file_name() {
        let entry = entry.map_err(|e| io_err(src, e))?;
        let rel = entry.path().strip_prefix(src).expect("walk stays under src");
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target).map_err(|e| io_err(&target, e))?;
        } else {
            std::fs::copy(entry.path(), &target).map_err(|e| io_err(&target, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(round: usize, rate: Option<f64>) -> RoundRecord {
        RoundRecord { round, tree_hash: String::new(), feedback: None, tdd_pass_rate: rate, unproductive: false }
    }

    #[test]
    fn argmax_prefers_latest_on_ties() {
        assert_eq!(argmax_latest(&[0.2, 0.5, 0.4]), Some(1));
        assert_eq!(argmax_latest(&[0.5, 0.5]), Some(1));
        assert_eq!(argmax_latest(&[0.7]), Some(0));
        assert_eq!(argmax_latest::<f64>(&[]), None);
    }

    #[test]
    fn untested_rounds_are_not_selected_over_tested_ones() {
        let records = vec![rec(0, Some(0.2)), rec(1, Some(0.5)), rec(2, None)];
        assert_eq!(select_best_round(&records).unwrap().round, 1);
        assert_eq!(select_best_round(&[rec(0, None)]).unwrap().round, 0);
    }

    #[test]
    fn config_rejects_zero_parallelism() {
        let mut c = PipelineConfig::default();
        c.runner.parallelism = 0;
        assert!(c.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn config_parses_partial_toml() {
        let c = PipelineConfig::from_toml("max_iter = 1\n[runner]\nparallelism = 2\n").unwrap();
        assert_eq!(c.max_iter, 1);
        assert_eq!(c.runner.parallelism, 2);
        assert_eq!(c.runner.step_budget, 15);
    }
}
