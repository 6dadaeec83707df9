use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::bundle::{ModelReply, PromptBundle, Segment, TokenUsage};
use super::ProviderConfig;

/// Failure from a single provider call.
#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderFailure {
    /// Network-level problem; worth retrying.
    #[error("transport: {0}")]
    Transport(String),
    /// The provider answered but the answer is unusable.
    #[error("provider: {0}")]
    Rejected(String),
}

/// Anything that can answer a prompt bundle.
pub trait ChatProvider: Send + Sync {
    fn send(&self, bundle: &PromptBundle, config: &ProviderConfig) -> Result<ModelReply, ProviderFailure>;
}

/// How image attachments are put on the wire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageEncoding {
    /// `image_url` parts carrying a base64 data URL.
    #[default]
    DataUrl,
    /// Drop images for text-only models.
    Omit,
}

/// Chat-completion style HTTP provider.
pub struct HttpChatProvider {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpChatProvider {
    pub fn new(config: &ProviderConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.request_timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        HttpChatProvider { agent, api_key }
    }

    pub fn request_body(bundle: &PromptBundle, config: &ProviderConfig) -> Value {
        let parts: Vec<Value> = bundle
            .turns
            .iter()
            .filter_map(|seg| match seg {
                Segment::Text { text } => Some(json!({ "type": "text", "text": text })),
                Segment::Image { image } => match config.image_encoding {
                    ImageEncoding::Omit => None,
                    ImageEncoding::DataUrl => {
                        let data = base64::engine::general_purpose::STANDARD.encode(&image.bytes);
                        Some(json!({
                            "type": "image_url",
                            "image_url": { "url": format!("data:{};base64,{data}", image.format.mime()) }
                        }))
                    }
                },
            })
            .collect();
        json!({
            "model": config.model,
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
            "messages": [
                { "role": "system", "content": bundle.system },
                { "role": "user", "content": parts },
            ],
        })
    }
}

impl ChatProvider for HttpChatProvider {
    fn send(&self, bundle: &PromptBundle, config: &ProviderConfig) -> Result<ModelReply, ProviderFailure> {
        let body = Self::request_body(bundle, config).to_string();
        let started = Instant::now();
        let mut req = self
            .agent
            .post(config.endpoint.as_str())
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.as_str())
            .map_err(|e| ProviderFailure::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderFailure::Transport(e.to_string()))?;
        if status >= 500 || status == 429 {
            return Err(ProviderFailure::Transport(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err(ProviderFailure::Rejected(format!("HTTP {status}: {text}")));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| ProviderFailure::Rejected(format!("invalid response body: {e}")))?;
        let raw = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderFailure::Rejected("response carries no message content".into()))?;
        if raw.is_empty() {
            return Err(ProviderFailure::Rejected("empty completion".into()));
        }
        let usage = TokenUsage {
            input: value.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            output: value.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        };
        Ok(ModelReply {
            raw: raw.to_string(),
            usage,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

type ScriptFn = dyn Fn(&PromptBundle) -> Result<String, ProviderFailure> + Send + Sync;

/// Provider backed by a local function. Used to author cassettes and in tests.
#[derive(Clone)]
pub struct ScriptedProvider {
    script: Arc<ScriptFn>,
}

impl ScriptedProvider {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&PromptBundle) -> Result<String, ProviderFailure> + Send + Sync + 'static,
    {
        ScriptedProvider { script: Arc::new(f) }
    }

    /// Always answers with the same text.
    pub fn constant(reply: impl Into<String>) -> Self {
        let reply = reply.into();
        Self::new(move |_| Ok(reply.clone()))
    }

    /// Answers with the given replies in order, then repeats the last one.
    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let replies: Vec<String> = replies.into_iter().map(Into::into).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        Self::new(move |_| {
            let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            replies
                .get(i.min(replies.len().saturating_sub(1)))
                .cloned()
                .ok_or_else(|| ProviderFailure::Rejected("empty script".into()))
        })
    }
}

impl ChatProvider for ScriptedProvider {
    fn send(&self, bundle: &PromptBundle, _config: &ProviderConfig) -> Result<ModelReply, ProviderFailure> {
        let raw = (self.script)(bundle)?;
        Ok(ModelReply {
            usage: TokenUsage {
                input: bundle.user_text().split_whitespace().count() as u64,
                output: raw.split_whitespace().count() as u64,
            },
            raw,
            latency_ms: 0,
        })
    }
}
