use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use webtdd_core::eval::{self, AlignmentPair, EvalRecord};
use webtdd_core::gateway::{Cassette, CassetteMode, Gateway, HttpChatProvider, Raster, RasterFormat};
use webtdd_core::orchestrator::{run_pipeline, PipelineConfig, PipelineEnv, PipelineError, ProgressEvent};
use webtdd_core::prompts::PromptSet;
use webtdd_core::testgen::{Suite, TestgenMode, UserRequest};
use webtdd_core::testrunner::{BrowserDriver, CdpDriver, HttpDriver, TestingAgent, Verdict};
use webtdd_core::workspace::{TemplateStore, WorkspaceState};
use webtdd_core::{AlignmentReport, EvalReport, Real};

const EXIT_USAGE: u8 = 2;
const EXIT_PROVIDER: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(name = "webtdd", version, about = "Generate, test and refine web applications with model agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline for one request.
    Generate(GenerateArgs),
    /// Launch a workspace and run a test suite against it once.
    Test(TestArgs),
    /// Score evaluation records or verdict alignment.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of starter templates.
    #[arg(long, default_value = "templates")]
    template_store: PathBuf,
    /// Record model traffic into this cassette.
    #[arg(long, conflicts_with = "replay")]
    record: Option<PathBuf>,
    /// Serve every model call from this cassette; no network access.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Directory with prompt template overrides.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Browser driver: `http` (static pages) or `cdp` (headless browser).
    #[arg(long, default_value = "http")]
    driver: String,
    /// Browser binary for the cdp driver.
    #[arg(long, default_value = "chromium")]
    browser: String,
    /// Attach the cdp driver to an already running browser (http://host:port).
    #[arg(long)]
    browser_endpoint: Option<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, conflicts_with = "desc_file")]
    desc: Option<String>,
    #[arg(long)]
    desc_file: Option<PathBuf>,
    /// Design image (png, jpeg or webp).
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_parser = ["multi-step", "straightforward"])]
    testgen: Option<String>,
    /// Run directory; must be empty or absent.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct TestArgs {
    /// A previous run directory (uses its workspace, suite and template).
    #[arg(long, conflicts_with = "workspace")]
    run_dir: Option<PathBuf>,
    #[arg(long, requires_all = ["suite", "template"])]
    workspace: Option<PathBuf>,
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Template id of the workspace.
    #[arg(long)]
    template: Option<String>,
    /// Where to write the feedback bundle.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// JSON array of evaluation records.
    #[arg(long, required_unless_present = "alignment")]
    records: Option<PathBuf>,
    /// Manual and agent verdict files.
    #[arg(long, num_args = 2, value_names = ["MANUAL", "AGENT"])]
    alignment: Option<Vec<PathBuf>>,
    /// Previously reported alignment percentage to check against.
    #[arg(long, requires = "alignment")]
    reported_rate: Option<Real>,
    /// Output directory for report files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Provider(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Provider(_) => EXIT_PROVIDER,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Provider(m) => write!(f, "model provider error: {m}\nhint: check WEBTDD_ENDPOINT and the credential variable, or pass --replay with a recorded cassette"),
            CliError::Internal(m) => write!(f, "error: {m}"),
        }
    }
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn from_pipeline(e: PipelineError) -> CliError {
    match e {
        e if e.is_provider_failure() => CliError::Provider(e.to_string()),
        PipelineError::InvalidConfig(m) => CliError::Usage(m),
        e => CliError::Internal(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RunStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    run_id: String,
    status: RunStatus,
    started_at: u64,
    finished_at: Option<u64>,
    testgen_mode: TestgenMode,
    cassette_mode: CassetteMode,
    config: PipelineConfig,
    error: Option<String>,
}

const MANIFEST: &str = "manifest.json";

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn emit(event: &Value) {
    println!("{event}");
}

fn load_config(common: &CommonArgs) -> Result<PipelineConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            PipelineConfig::from_toml(&text).map_err(from_pipeline)?
        }
        None => PipelineConfig::default(),
    };
    config.provider = config.provider.with_env_overrides();
    if let Some(p) = common.parallelism {
        config.runner.parallelism = p;
    }
    Ok(config)
}

fn build_gateway(common: &CommonArgs, config: &mut PipelineConfig) -> Result<Gateway, CliError> {
    let provider = config.provider.clone();
    let gateway = if let Some(path) = &common.replay {
        config.cassette_mode = CassetteMode::Replay;
        Gateway::replay_file(provider, path)
    } else if let Some(path) = &common.record {
        config.cassette_mode = CassetteMode::Record;
        let cassette = Cassette::open_for_record(path).map_err(internal)?;
        Gateway::record(provider.clone(), Arc::new(HttpChatProvider::new(&provider)), cassette)
    } else {
        config.cassette_mode = CassetteMode::Passthrough;
        Gateway::passthrough(provider.clone(), Arc::new(HttpChatProvider::new(&provider)))
    };
    gateway.map_err(|e| if e.is_fatal() { CliError::Usage(e.to_string()) } else { internal(e) })
}

fn build_driver(common: &CommonArgs) -> Result<Arc<dyn BrowserDriver>, CliError> {
    match common.driver.as_str() {
        "http" => Ok(Arc::new(HttpDriver::new())),
        "cdp" => match &common.browser_endpoint {
            Some(endpoint) => Ok(Arc::new(CdpDriver::attach(endpoint.clone()))),
            None => Ok(Arc::new(CdpDriver::launch(&common.browser, 9333).map_err(internal)?)),
        },
        other => Err(CliError::Usage(format!("unknown driver {other:?} (expected http or cdp)"))),
    }
}

fn load_prompts(common: &CommonArgs) -> Result<Arc<PromptSet>, CliError> {
    let set = match &common.prompts {
        Some(dir) => PromptSet::with_overrides(dir).map_err(|e| CliError::Usage(e.to_string()))?,
        None => PromptSet::builtin(),
    };
    Ok(Arc::new(set))
}

fn load_store(common: &CommonArgs) -> Result<TemplateStore, CliError> {
    let store = TemplateStore::load(&common.template_store).map_err(|e| CliError::Usage(format!("{e} (set --template-store)")))?;
    if store.is_empty() {
        return Err(CliError::Usage(format!("no templates found in {}", common.template_store.display())));
    }
    Ok(store)
}

fn load_image(path: &Path) -> Result<Raster, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let format = RasterFormat::from_extension(ext).ok_or_else(|| CliError::Usage(format!("{}: unsupported image format", path.display())))?;
    let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(Raster { format, bytes })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(internal)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| internal(format!("{}: {e}", path.display())))
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let description = match (&args.desc, &args.desc_file) {
        (Some(d), _) => d.clone(),
        (None, Some(path)) => std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        (None, None) => return Err(CliError::Usage("a description is required (--desc or --desc-file)".into())),
    };
    let mut request = UserRequest::new(description).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(path) = &args.image {
        request = request.with_image(load_image(path)?);
    }
    let mut config = load_config(&args.common)?;
    if let Some(n) = args.max_iter {
        config.max_iter = n;
    }
    if let Some(mode) = &args.testgen {
        config.testgen_mode = mode.parse().map_err(CliError::Usage)?;
    }
    let gateway = build_gateway(&args.common, &mut config)?;
    config.validate().map_err(from_pipeline)?;
    let store = load_store(&args.common)?;
    let prompts = load_prompts(&args.common)?;
    let driver = build_driver(&args.common)?;

    let started_at = now();
    let run_id = format!("run-{started_at}-{}", std::process::id());
    let run_dir = args.run_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&run_id));
    let mut manifest = RunManifest {
        run_id: run_id.clone(),
        status: RunStatus::Running,
        started_at,
        finished_at: None,
        testgen_mode: config.testgen_mode,
        cassette_mode: config.cassette_mode,
        config: config.clone(),
        error: None,
    };
    emit(&serde_json::json!({"event": "run-started", "run_id": run_id, "run_dir": run_dir}));
    let progress = |e: &ProgressEvent| emit(&serde_json::to_value(e).expect("event serializes"));
    let env = PipelineEnv { gateway: &gateway, driver, store: &store, prompts, progress: &progress };
    let outcome = run_pipeline(&request, &config, &env, &run_dir);
    manifest.finished_at = Some(now());
    let result = match outcome {
        Ok(result) => {
            manifest.status = RunStatus::Done;
            emit(&serde_json::json!({
                "event": "run-finished",
                "status": "done",
                "selected_round": result.selected_round,
                "develop_steps": result.develop_steps,
                "suite_runs": result.suite_runs,
                "provider_calls": gateway.provider_calls(),
            }));
            Ok(())
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            emit(&serde_json::json!({"event": "run-finished", "status": "failed", "error": e.to_string()}));
            Err(from_pipeline(e))
        }
    };
    if run_dir.is_dir() {
        write_json(&run_dir.join(MANIFEST), &manifest)?;
    }
    result
}

fn cmd_test(args: TestArgs) -> Result<(), CliError> {
    let (workspace, suite_path, template_id) = match (&args.run_dir, &args.workspace) {
        (Some(run), _) => {
            let result: Value = serde_json::from_str(
                &std::fs::read_to_string(run.join("result.json")).map_err(|e| CliError::Usage(format!("{}: {e}", run.display())))?,
            )
            .map_err(internal)?;
            let template = result["template"].as_str().ok_or_else(|| internal("result.json lacks a template id"))?.to_string();
            (run.join("workspace"), run.join("suite.json"), template)
        }
        (None, Some(ws)) => (
            ws.clone(),
            args.suite.clone().expect("clap enforces --suite"),
            args.template.clone().expect("clap enforces --template"),
        ),
        (None, None) => return Err(CliError::Usage("pass --run-dir or --workspace with --suite and --template".into())),
    };
    let suite = Suite::read(&suite_path).map_err(|e| CliError::Usage(e.to_string()))?;
    if suite.tests.is_empty() {
        return Err(CliError::Usage("the suite contains no tests".into()));
    }
    let mut config = load_config(&args.common)?;
    let gateway = build_gateway(&args.common, &mut config)?;
    let store = load_store(&args.common)?;
    let template = store.get(&template_id).map_err(|e| CliError::Usage(e.to_string()))?.clone();
    let ws = WorkspaceState::open(template, &workspace).map_err(|e| CliError::Usage(e.to_string()))?;
    let tester = TestingAgent::new(&gateway, load_prompts(&args.common)?, build_driver(&args.common)?, config.runner.clone());
    let run = tester.run_suite(&ws, &suite.tests, 0, None).map_err(|e| CliError::Provider(e.to_string()))?;
    let out = args.out.clone().unwrap_or_else(|| workspace.parent().unwrap_or(Path::new(".")).join("feedback-standalone.json"));
    std::fs::write(&out, run.feedback.to_json()).map_err(|e| internal(format!("{}: {e}", out.display())))?;
    let c = run.feedback.counts;
    emit(&serde_json::json!({
        "event": "test-finished",
        "deployment_ok": run.feedback.deployment.ok,
        "yes": c.yes, "partial": c.partial, "no": c.no, "total": c.total,
        "feedback": out,
    }));
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<EvalRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let raw: Vec<Value> = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a JSON array of records: {e}", path.display())))?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, value) in raw.into_iter().enumerate() {
        match serde_json::from_value::<EvalRecord>(value) {
            Ok(r) => match r.validate() {
                Ok(()) => records.push(r),
                Err(e) => errors.push(format!("record {i}: {e}")),
            },
            Err(e) => errors.push(format!("record {i}: {e}")),
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Usage(format!("{} invalid record(s):\n  {}", errors.len(), errors.join("\n  "))));
    }
    Ok(records)
}

/// Verdict file: a JSON array of labels, or an object keyed by test id.
fn read_verdicts(path: &Path) -> Result<Vec<(String, Verdict)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let parse = |key: String, v: &Value| -> Result<(String, Verdict), CliError> {
        let label = v.as_str().unwrap_or_default();
        Verdict::from_label(label)
            .map(|verdict| (key.clone(), verdict))
            .ok_or_else(|| CliError::Usage(format!("{}: {key}: {v} is not YES, PARTIAL or NO", path.display())))
    };
    match value {
        Value::Array(items) => items.iter().enumerate().map(|(i, v)| parse(i.to_string(), v)).collect(),
        Value::Object(map) => map.iter().map(|(k, v)| parse(k.clone(), v)).collect(),
        _ => Err(CliError::Usage(format!("{}: expected an array or object of verdicts", path.display()))),
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out).map_err(|e| internal(format!("{}: {e}", args.out.display())))?;
    if let Some(records_path) = &args.records {
        let records = read_records(records_path)?;
        let report: EvalReport = eval::emit_report(&records).map_err(|e| CliError::Usage(e.to_string()))?;
        write_json(&args.out.join("report.json"), &report)?;
        let text = report.render_text();
        std::fs::write(args.out.join("report.txt"), &text).map_err(internal)?;
        print!("{text}");
    }
    if let Some(files) = &args.alignment {
        let manual = read_verdicts(&files[0])?;
        let agent = read_verdicts(&files[1])?;
        let agent_by_key: std::collections::BTreeMap<_, _> = agent.into_iter().collect();
        let mut pairs = Vec::new();
        for (key, m) in &manual {
            let a = agent_by_key.get(key).ok_or_else(|| CliError::Usage(format!("agent verdicts lack {key}")))?;
            pairs.push(AlignmentPair { agent: *a, manual: *m });
        }
        let report: AlignmentReport = eval::alignment_rate_checked(&pairs, args.reported_rate).map_err(|e| CliError::Usage(e.to_string()))?;
        write_json(&args.out.join("alignment.json"), &report)?;
        println!("Alignment: {}/{} = {:.2}%", report.matches, report.total, report.rate);
        if let Some(r) = report.restricted_rate {
            println!("YES/NO alignment: {}/{} = {:.2}%", report.restricted_matches, report.restricted_total, r);
        }
        if let Some(note) = &report.note {
            println!("Note: {note}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("WEBTDD_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Test(a) => cmd_test(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
