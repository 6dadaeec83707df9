//! Single entry point for every model interaction.
//!
//! The [`Gateway`] owns the provider, the cassette and the structured-output
//! contract. In replay mode it holds no provider at all, so a replayed run
//! cannot reach the network.

mod bundle;
mod cassette;
mod provider;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{debug, warn};

pub use bundle::{
    canonical_json, Fingerprint, ModelReply, PromptBundle, Raster, RasterFormat, ReplyGrammar,
    Segment, TokenUsage,
};
pub use cassette::{Cassette, CassetteEntry, CassetteMode};
pub use provider::{ChatProvider, HttpChatProvider, ImageEncoding, ProviderFailure, ScriptedProvider};

use crate::devagent::{parse_actions_text, parse_selection_text, ParsedActions, ParsedSelection};
use crate::workspace::clean_artifact_text;

/// Connection and sampling settings for the model provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_secs: u64,
    /// Re-asks allowed after a reply fails to parse.
    pub max_reasks: u32,
    /// Extra attempts after a transport failure.
    pub transport_retries: u32,
    /// Environment variable holding the bearer credential.
    pub api_key_env: String,
    pub image_encoding: ImageEncoding,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-4.1".into(),
            temperature: 0.0,
            max_output_tokens: 16_384,
            request_timeout_secs: 300,
            max_reasks: 2,
            transport_retries: 2,
            api_key_env: "WEBTDD_API_KEY".into(),
            image_encoding: ImageEncoding::DataUrl,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature != 0.0 {
            return Err(GatewayError::InvalidConfig(format!(
                "temperature must be 0, got {}",
                self.temperature
            )));
        }
        if self.request_timeout_secs == 0 {
            return Err(GatewayError::InvalidConfig("request timeout must be positive".into()));
        }
        url::Url::parse(&self.endpoint)
            .map_err(|e| GatewayError::InvalidConfig(format!("endpoint {:?}: {e}", self.endpoint)))?;
        if self.model.trim().is_empty() {
            return Err(GatewayError::InvalidConfig("model identifier is empty".into()));
        }
        Ok(())
    }

    /// Apply `WEBTDD_ENDPOINT` and `WEBTDD_MODEL` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(endpoint) = std::env::var("WEBTDD_ENDPOINT") {
            if !endpoint.is_empty() {
                self.endpoint = endpoint;
            }
        }
        if let Ok(model) = std::env::var("WEBTDD_MODEL") {
            if !model.is_empty() {
                self.model = model;
            }
        }
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("invalid prompt bundle: {0}")]
    InvalidBundle(String),
    #[error("provider unreachable after {attempts} attempt(s): {last_error}")]
    ProviderUnreachable { attempts: u32, last_error: String },
    #[error("provider rejected the request: {0}")]
    ProviderRejected(String),
    #[error("no cassette entry for fingerprint {fingerprint}")]
    CassetteMiss { fingerprint: Fingerprint },
    #[error("reply did not match {grammar:?} after {} attempt(s): {last_error}", attempts.len())]
    MalformedAfterRetries {
        grammar: ReplyGrammar,
        attempts: Vec<String>,
        last_error: String,
    },
    #[error("cassette {}: {message}", path.display())]
    Cassette { path: PathBuf, message: String },
    #[error("no provider configured for {0:?} mode")]
    NoProvider(CassetteMode),
}

impl GatewayError {
    /// Errors that end a run: the provider cannot be used at all.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, GatewayError::MalformedAfterRetries { .. })
    }
}

/// A reply parsed according to its declared grammar.
#[derive(Debug, Clone)]
pub enum ParsedDocument {
    JsonArray(Vec<Value>),
    Actions(ParsedActions),
    Selection(ParsedSelection),
}

impl ParsedDocument {
    pub fn into_json_array(self) -> Option<Vec<Value>> {
        match self {
            ParsedDocument::JsonArray(v) => Some(v),
            _ => None,
        }
    }
}

/// Parse `raw` against `grammar`. Free text always parses to nothing useful,
/// so it is rejected here.
pub fn parse_document(raw: &str, grammar: ReplyGrammar) -> Result<ParsedDocument, String> {
    match grammar {
        ReplyGrammar::FreeText => Err("free-text replies have no structure to parse".into()),
        ReplyGrammar::JsonArray => parse_json_array(raw).map(ParsedDocument::JsonArray),
        ReplyGrammar::XmlActions => {
            let parsed = parse_actions_text(raw);
            if parsed.actions.is_empty() {
                let mut msg = String::from("no well-formed <Action> tags found");
                if let Some(d) = parsed.diagnostics.first() {
                    msg.push_str(&format!(" ({d})"));
                }
                Err(msg)
            } else {
                Ok(ParsedDocument::Actions(parsed))
            }
        }
        ReplyGrammar::XmlSelection => {
            let parsed = parse_selection_text(raw);
            if !parsed.wrapper_found && parsed.included.is_empty() && parsed.excluded.is_empty() {
                Err("no <FileSelection> block or file directives found".into())
            } else {
                Ok(ParsedDocument::Selection(parsed))
            }
        }
    }
}

/// Clean fences and entities, then read one JSON array. Prose around the
/// array is tolerated.
pub fn parse_json_array(raw: &str) -> Result<Vec<Value>, String> {
    let cleaned = clean_artifact_text(raw);
    let text = cleaned.trim();
    let direct = serde_json::from_str::<Value>(text);
    let value = match direct {
        Ok(v) => v,
        Err(first_err) => {
            let (Some(start), Some(end)) = (text.find('['), text.rfind(']')) else {
                return Err(format!("not JSON: {first_err}"));
            };
            if end <= start {
                return Err(format!("not JSON: {first_err}"));
            }
            serde_json::from_str::<Value>(&text[start..=end]).map_err(|e| format!("not JSON: {e}"))?
        }
    };
    match value {
        Value::Array(items) => Ok(items),
        other => Err(format!("expected a JSON array, found {}", json_kind(&other))),
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Corrective text appended when a reply fails to parse.
pub fn corrective_instruction(grammar: ReplyGrammar, error: &str, previous: &str) -> String {
    format!(
        "Your previous reply could not be used because it violated the required response format: {error}.\n\
         Previous reply:\n<<<\n{previous}\n>>>\n\
         Reply again with {} and nothing else.",
        grammar.describe()
    )
}

pub struct Gateway {
    config: ProviderConfig,
    mode: CassetteMode,
    provider: Option<Arc<dyn ChatProvider>>,
    cassette: Mutex<Cassette>,
    provider_calls: AtomicUsize,
    completions: AtomicUsize,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.mode)
            .field("model", &self.config.model)
            .finish()
    }
}

impl Gateway {
    /// Replay-only gateway. It has no provider, so it never makes network calls.
    pub fn replay(config: ProviderConfig, cassette: Cassette) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Gateway {
            config,
            mode: CassetteMode::Replay,
            provider: None,
            cassette: Mutex::new(cassette),
            provider_calls: AtomicUsize::new(0),
            completions: AtomicUsize::new(0),
        })
    }

    pub fn replay_file(config: ProviderConfig, path: &Path) -> Result<Self, GatewayError> {
        Self::replay(config, Cassette::load(path)?)
    }

    /// Gateway that calls `provider` and appends every reply to `cassette`.
    pub fn record(
        config: ProviderConfig,
        provider: Arc<dyn ChatProvider>,
        cassette: Cassette,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Gateway {
            config,
            mode: CassetteMode::Record,
            provider: Some(provider),
            cassette: Mutex::new(cassette),
            provider_calls: AtomicUsize::new(0),
            completions: AtomicUsize::new(0),
        })
    }

    pub fn passthrough(config: ProviderConfig, provider: Arc<dyn ChatProvider>) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Gateway {
            config,
            mode: CassetteMode::Passthrough,
            provider: Some(provider),
            cassette: Mutex::new(Cassette::in_memory()),
            provider_calls: AtomicUsize::new(0),
            completions: AtomicUsize::new(0),
        })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Number of requests that reached the provider.
    pub fn provider_calls(&self) -> usize {
        self.provider_calls.load(Ordering::SeqCst)
    }

    /// Number of completed `complete` calls, replayed or live.
    pub fn completions(&self) -> usize {
        self.completions.load(Ordering::SeqCst)
    }

    pub fn cassette_len(&self) -> usize {
        self.cassette.lock().expect("cassette lock").len()
    }

    pub fn complete(&self, bundle: &PromptBundle) -> Result<ModelReply, GatewayError> {
        bundle.validate()?;
        let fingerprint = bundle.fingerprint();
        let reply = match self.mode {
            CassetteMode::Replay => {
                let hit = self.cassette.lock().expect("cassette lock").lookup(&fingerprint);
                hit.ok_or(GatewayError::CassetteMiss { fingerprint })?
            }
            CassetteMode::Record => {
                let reply = self.call_provider(bundle)?;
                self.cassette
                    .lock()
                    .expect("cassette lock")
                    .append(fingerprint, reply.clone())?;
                reply
            }
            CassetteMode::Passthrough => self.call_provider(bundle)?,
        };
        self.completions.fetch_add(1, Ordering::SeqCst);
        Ok(reply)
    }

    fn call_provider(&self, bundle: &PromptBundle) -> Result<ModelReply, GatewayError> {
        let provider = self.provider.as_ref().ok_or(GatewayError::NoProvider(self.mode))?;
        let attempts = 1 + self.config.transport_retries;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 * (1 << attempt.min(5))));
            }
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            match provider.send(bundle, &self.config) {
                Ok(reply) => return Ok(reply),
                Err(ProviderFailure::Transport(e)) => {
                    warn!(attempt, error = %e, "provider transport failure");
                    last_error = e;
                }
                Err(ProviderFailure::Rejected(e)) => return Err(GatewayError::ProviderRejected(e)),
            }
        }
        Err(GatewayError::ProviderUnreachable { attempts, last_error })
    }

    /// Complete and parse against the bundle's grammar, re-asking with a
    /// corrective instruction up to `max_reasks` times.
    pub fn complete_structured(&self, bundle: &PromptBundle) -> Result<ParsedDocument, GatewayError> {
        if bundle.grammar == ReplyGrammar::FreeText {
            return Err(GatewayError::InvalidBundle(
                "structured completion needs a non-free-text grammar".into(),
            ));
        }
        self.complete_with(bundle, |raw| parse_document(raw, bundle.grammar))
    }

    /// Re-ask loop with a caller-supplied parser. Semantic validation
    /// failures trigger a re-ask exactly like grammar violations.
    pub fn complete_with<T, F>(&self, bundle: &PromptBundle, parse: F) -> Result<T, GatewayError>
    where
        F: Fn(&str) -> Result<T, String>,
    {
        let mut attempts = Vec::new();
        let mut current = bundle.clone();
        let mut last_error = String::new();
        for round in 0..=self.config.max_reasks {
            let reply = self.complete(&current)?;
            match parse(&reply.raw) {
                Ok(doc) => return Ok(doc),
                Err(e) => {
                    debug!(round, error = %e, "structured reply rejected");
                    current = bundle
                        .clone()
                        .with_text(corrective_instruction(bundle.grammar, &e, &reply.raw));
                    attempts.push(reply.raw);
                    last_error = e;
                }
            }
        }
        Err(GatewayError::MalformedAfterRetries {
            grammar: bundle.grammar,
            attempts,
            last_error,
        })
    }

    /// JSON-array completion whose items are then checked by `validate`.
    pub fn complete_json_with<T, F>(&self, bundle: &PromptBundle, validate: F) -> Result<T, GatewayError>
    where
        F: Fn(Vec<Value>) -> Result<T, String>,
    {
        self.complete_with(bundle, |raw| parse_json_array(raw).and_then(&validate))
    }

    /// Structured completion that must yield a JSON array.
    pub fn complete_json(&self, bundle: &PromptBundle) -> Result<Vec<Value>, GatewayError> {
        debug_assert_eq!(bundle.grammar, ReplyGrammar::JsonArray);
        match self.complete_structured(bundle)? {
            ParsedDocument::JsonArray(v) => Ok(v),
            other => unreachable!("json grammar produced {other:?}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(grammar: ReplyGrammar) -> PromptBundle {
        PromptBundle::new("system", grammar).with_text("give me data")
    }

    fn recording(provider: ScriptedProvider, reasks: u32) -> Gateway {
        let config = ProviderConfig { max_reasks: reasks, ..ProviderConfig::default() };
        Gateway::record(config, Arc::new(provider), Cassette::in_memory()).unwrap()
    }

    #[test]
    fn record_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tape.jsonl");
        let b = bundle(ReplyGrammar::FreeText);
        let live = Gateway::record(
            ProviderConfig::default(),
            Arc::new(ScriptedProvider::constant("héllo\n  world ")),
            Cassette::open_for_record(&path).unwrap(),
        )
        .unwrap();
        let recorded = live.complete(&b).unwrap();
        let replay = Gateway::replay_file(ProviderConfig::default(), &path).unwrap();
        let replayed = replay.complete(&b).unwrap();
        assert_eq!(recorded.raw.as_bytes(), replayed.raw.as_bytes());
        assert_eq!(replay.provider_calls(), 0);
    }

    #[test]
    fn replay_miss_reports_fingerprint() {
        let gw = Gateway::replay(ProviderConfig::default(), Cassette::in_memory()).unwrap();
        let b = bundle(ReplyGrammar::FreeText);
        match gw.complete(&b) {
            Err(GatewayError::CassetteMiss { fingerprint }) => assert_eq!(fingerprint, b.fingerprint()),
            other => panic!("expected miss, got {other:?}"),
        }
    }

    #[test]
    fn well_formed_json_array() {
        let gw = recording(ScriptedProvider::constant(r#"[{"id":1}]"#), 0);
        let items = gw.complete_json(&bundle(ReplyGrammar::JsonArray)).unwrap();
        assert_eq!(items, vec![serde_json::json!({"id": 1})]);
    }

    #[test]
    fn fenced_json_parses_after_cleaning() {
        let raw = "```json\n[{\"name\": \"a &amp; b\"}]\n```";
        let cleaned = clean_artifact_text(raw);
        let expected: Vec<Value> = serde_json::from_str(&cleaned).unwrap();
        let gw = recording(ScriptedProvider::constant(raw), 0);
        assert_eq!(gw.complete_json(&bundle(ReplyGrammar::JsonArray)).unwrap(), expected);
    }

    #[test]
    fn malformed_with_zero_bound_fails_once() {
        let gw = recording(ScriptedProvider::constant("not json"), 0);
        match gw.complete_structured(&bundle(ReplyGrammar::JsonArray)) {
            Err(GatewayError::MalformedAfterRetries { attempts, .. }) => {
                assert_eq!(attempts, vec!["not json".to_string()])
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(gw.provider_calls(), 1);
    }

    #[test]
    fn reask_recovers_and_respects_bound() {
        let gw = recording(ScriptedProvider::sequence(["nope", "[1, 2]"]), 3);
        let items = gw.complete_json(&bundle(ReplyGrammar::JsonArray)).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(gw.provider_calls(), 2);

        let gw = recording(ScriptedProvider::constant("{}"), 2);
        assert!(gw.complete_structured(&bundle(ReplyGrammar::JsonArray)).is_err());
        assert_eq!(gw.provider_calls(), 3);
    }

    #[test]
    fn transport_failures_become_unreachable() {
        let provider = ScriptedProvider::new(|_| Err(ProviderFailure::Transport("refused".into())));
        let config = ProviderConfig { transport_retries: 1, ..ProviderConfig::default() };
        let gw = Gateway::passthrough(config, Arc::new(provider)).unwrap();
        assert!(matches!(
            gw.complete(&bundle(ReplyGrammar::FreeText)),
            Err(GatewayError::ProviderUnreachable { attempts: 2, .. })
        ));
    }

    #[test]
    fn config_requires_zero_temperature() {
        let config = ProviderConfig { temperature: 0.7, ..ProviderConfig::default() };
        assert!(config.validate().is_err());
        let config = ProviderConfig { request_timeout_secs: 0, ..ProviderConfig::default() };
        assert!(config.validate().is_err());
    }
}
