//! Text-generation gateway: an OpenAI-style completions client and a
//! deterministic mock, both behind [`LlmGateway`].
//!
//! Exactly one backend is configured per deployment.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::BehaviorMode;
use crate::taxonomy::Catalog;

pub const ENV_LLM_URL: &str = "DENIAL_LLM_URL";
pub const ENV_LLM_KEY: &str = "DENIAL_LLM_KEY";
pub const DEFAULT_TIMEOUT_SECS: u64 = 30;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;

/// Reply used by the mock when it has nothing technique-specific to say.
pub const MOCK_FALLBACK_REPLY: &str = "I am not convinced. Show me something better.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
    /// Dialogue position of the request. Never sent over the wire; the mock
    /// uses it to pick a reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<RequestContext>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestContext {
    pub persona_id: String,
    pub topic: String,
    pub technique_id: Option<String>,
    pub mode: BehaviorMode,
    /// Number of bot turns already in the session (the opening line counts).
    pub bot_turn: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub text: String,
    pub latency: Duration,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("LLM request timed out after {0:?}")]
    Timeout(Duration),
    #[error("LLM transport error: {0}")]
    Transport(String),
    #[error("LLM backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("LLM backend returned an unexpected body: {0}")]
    InvalidResponse(String),
    #[error("mock reply script is exhausted")]
    ScriptExhausted,
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
}

impl LlmError {
    /// Whether the caller may retry the same request.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Timeout(_) | LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait LlmGateway: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, LlmError>;

    fn backend_id(&self) -> String;
}

impl<T: LlmGateway + ?Sized> LlmGateway for Arc<T> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, LlmError> {
        (**self).generate(request)
    }

    fn backend_id(&self) -> String {
        (**self).backend_id()
    }
}

fn validate(request: &GenerationRequest) -> Result<(), LlmError> {
    if request.prompt.is_empty() {
        return Err(LlmError::InvalidRequest("empty prompt".into()));
    }
    if request.max_tokens == 0 {
        return Err(LlmError::InvalidRequest(
            "max_tokens must be positive".into(),
        ));
    }
    if request.temperature.is_nan() || request.temperature < 0.0 {
        return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
    }
    Ok(())
}

// ── Configuration ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Full completions endpoint, e.g. `http://localhost:8000/v1/completions`.
    pub url: Option<String>,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub temperature: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            url: None,
            model: "mistral-7b-instruct".to_string(),
            api_key: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
}

impl LlmConfig {
    /// Parses the `[llm]` table of a TOML config file (or a bare table).
    pub fn from_toml_str(source: &str) -> Result<Self, ConfigError> {
        #[derive(Deserialize)]
        struct Wrapper {
            llm: Option<LlmConfig>,
        }
        let table: toml::Table = toml::from_str(source)
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let value = toml::Value::Table(table);
        if value.get("llm").is_some() {
            let wrapper: Wrapper = value
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
            Ok(wrapper.llm.unwrap_or_default())
        } else {
            value
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&source)
    }

    /// Environment variables override file values.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_LLM_URL) {
            if !url.trim().is_empty() {
                self.url = Some(url);
            }
        }
        if let Ok(key) = std::env::var(ENV_LLM_KEY) {
            if !key.trim().is_empty() {
                self.api_key = Some(key);
            }
        }
        self
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

// ── HTTP backend ────────────────────────────────────────────────────────

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    #[serde(default)]
    text: Option<String>,
}

/// Client for an OpenAI-style `/v1/completions` endpoint.
pub struct HttpCompletionClient {
    url: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    agent: ureq::Agent,
}

impl HttpCompletionClient {
    pub fn new(config: &LlmConfig) -> Result<Self, ConfigError> {
        let url = config.url.clone().ok_or_else(|| {
            ConfigError::Parse(format!("no LLM url configured (set {ENV_LLM_URL})"))
        })?;
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(ConfigError::Parse(format!(
                "LLM url `{url}` is not http(s)"
            )));
        }
        let timeout = config.timeout();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            url,
            model: config.model.clone(),
            api_key: config.api_key.clone(),
            timeout,
            agent,
        })
    }
}

impl LlmGateway for HttpCompletionClient {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, LlmError> {
        validate(request)?;
        let started = Instant::now();
        let body = CompletionBody {
            model: &self.model,
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            stop: &request.stop_sequences,
        };
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout(self.timeout),
            other => LlmError::Transport(other.to_string()),
        })?;

        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(LlmError::Status { status, body });
        }
        let parsed: CompletionResponse = response.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout(self.timeout),
            other => LlmError::InvalidResponse(other.to_string()),
        })?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::InvalidResponse("no choices".into()))?
            .text
            .unwrap_or_default();
        Ok(GenerationResult {
            text,
            latency: started.elapsed(),
            backend_id: self.backend_id(),
        })
    }

    fn backend_id(&self) -> String {
        format!("http:{}", self.model)
    }
}

// ── Mock backend ────────────────────────────────────────────────────────

/// 64-bit FNV-1a over `persona_id 0x1f technique_id 0x1f bot_turn`.
pub fn stable_hash(persona_id: &str, technique_id: &str, bot_turn: usize) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let turn = bot_turn.to_string();
    let mut hash = OFFSET;
    for byte in persona_id
        .bytes()
        .chain([0x1f])
        .chain(technique_id.bytes())
        .chain([0x1f])
        .chain(turn.bytes())
    {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Deterministic stand-in for a model. Without a script it answers with one
/// of the selected technique's example utterances; with a script it replays
/// the scripted replies in order.
pub struct MockGateway {
    catalog: Arc<Catalog>,
    script: Mutex<Option<VecDeque<String>>>,
}

impl MockGateway {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        Self {
            catalog,
            script: Mutex::new(None),
        }
    }

    pub fn with_script<I, S>(catalog: Arc<Catalog>, replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            catalog,
            script: Mutex::new(Some(replies.into_iter().map(Into::into).collect())),
        }
    }

    /// Script file: one reply per line.
    pub fn from_script_file(
        catalog: Arc<Catalog>,
        path: impl AsRef<Path>,
    ) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::with_script(catalog, text.lines().map(str::to_string)))
    }

    fn unscripted_reply(&self, context: Option<&RequestContext>) -> String {
        let Some(ctx) = context else {
            return "No".to_string();
        };
        if ctx.mode == BehaviorMode::Conceding {
            return format!(
                "Alright, you have made your point. I will have to rethink what I believe about {}.",
                ctx.topic
            );
        }
        let utterances = ctx
            .technique_id
            .as_deref()
            .and_then(|id| self.catalog.technique(id))
            .map(|t| t.example_utterances.as_slice())
            .unwrap_or(&[]);
        if utterances.is_empty() {
            return MOCK_FALLBACK_REPLY.to_string();
        }
        let technique_id = ctx.technique_id.as_deref().unwrap_or_default();
        let index =
            stable_hash(&ctx.persona_id, technique_id, ctx.bot_turn) % utterances.len() as u64;
        utterances[index as usize].replace("{topic}", &ctx.topic)
    }
}

impl LlmGateway for MockGateway {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, LlmError> {
        validate(request)?;
        let started = Instant::now();
        let text = {
            let mut script = self.script.lock().expect("mock script lock");
            match script.as_mut() {
                Some(queue) => queue.pop_front().ok_or(LlmError::ScriptExhausted)?,
                None => self.unscripted_reply(request.context.as_ref()),
            }
        };
        Ok(GenerationResult {
            text,
            latency: started.elapsed(),
            backend_id: self.backend_id(),
        })
    }

    fn backend_id(&self) -> String {
        "mock".to_string()
    }
}
