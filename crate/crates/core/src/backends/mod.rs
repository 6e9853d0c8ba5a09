//! Model clients behind one synchronous contract: a scripted mock, a
//! record/replay cache and an OpenAI-compatible chat-completions client.
//!
//! Every request has a fingerprint: the SHA-256 of its canonical JSON form
//! (model id, messages, sampling) where attached images are represented by
//! the SHA-256 of their bytes. Replay entries are keyed by it.

mod mock;
mod remote;
mod replay;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use mock::{MockClient, MockRule, MockScript};
pub use remote::{ConcurrencyLimiter, RemoteClient};
pub use replay::{ReplayClient, ReplayEntry, ReplayStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("replay cache has no entry for fingerprint {0}")]
    CacheMiss(String),
    #[error("transport failed after {attempts} attempt(s): {}", log.join("; "))]
    Transport { attempts: u32, log: Vec<String> },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("image {path}: {reason}")]
    Image { path: String, reason: String },
    #[error("fingerprint {0} is already recorded with different content")]
    Integrity(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("remote rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed remote response: {0}")]
    BadResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    pub(crate) fn io(path: &Path, err: impl fmt::Display) -> Self {
        BackendError::Io {
            path: path.display().to_string(),
            reason: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<PathBuf>,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            text: text.into(),
            image_ref: None,
        }
    }

    pub fn with_image(mut self, path: impl Into<PathBuf>) -> Self {
        self.image_ref = Some(path.into());
        self
    }
}

/// Decoding settings. Temperature 0 with a fixed seed unless configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sampling {
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 0.0,
            max_output_tokens: 2048,
            seed: Some(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub sampling: Sampling,
}

pub(crate) fn read_image(path: &Path) -> Result<Vec<u8>, BackendError> {
    fs::read(path).map_err(|e| BackendError::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ModelRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("request has no messages".into()));
        }
        if !(self.sampling.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.sampling.max_output_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Canonical form: images replaced by the digest of their bytes.
    pub fn canonical(&self) -> Result<serde_json::Value, BackendError> {
        let messages = self
            .messages
            .iter()
            .map(|m| {
                let image = match &m.image_ref {
                    Some(path) => Some(sha256_hex(&read_image(path)?)),
                    None => None,
                };
                Ok(json!({ "role": m.role, "text": m.text, "image_sha256": image }))
            })
            .collect::<Result<Vec<_>, BackendError>>()?;
        Ok(json!({
            "model_id": self.model_id,
            "messages": messages,
            "sampling": self.sampling,
        }))
    }

    pub fn fingerprint(&self) -> Result<String, BackendError> {
        let canonical = self.canonical()?;
        Ok(sha256_hex(canonical.to_string().as_bytes()))
    }

    /// All message text joined by newlines; used by mock rules.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    #[default]
    Stop,
    Length,
    ContentFilter,
    #[serde(other)]
    Other,
}

impl FinishReason {
    pub fn from_wire(s: &str) -> Self {
        match s {
            "stop" => FinishReason::Stop,
            "length" => FinishReason::Length,
            "content_filter" => FinishReason::ContentFilter,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub request_fingerprint: String,
    #[serde(default = "one")]
    pub attempts: u32,
}

fn one() -> u32 {
    1
}

fn one_usize() -> usize {
    1
}

/// Anything that turns a request into a response.
pub trait ModelClient: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Replay,
    Remote,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Mock => "mock",
            BackendKind::Replay => "replay",
            BackendKind::Remote => "remote",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    /// Fraction of the backoff window that is randomized; 1.0 is full jitter.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff_ms: 500,
            jitter: 1.0,
        }
    }
}

/// One named backend as written in the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_id: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub auth_env_var: Option<String>,
    #[serde(default = "one_usize")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub timeout_ms: Option<u64>,
    #[serde(default)]
    pub replay_path: Option<PathBuf>,
    /// Replay only: on a miss, call `upstream` and store the answer.
    #[serde(default)]
    pub record: bool,
    #[serde(default)]
    pub upstream: Option<String>,
    /// Mock only: scripted response table.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub sampling: Sampling,
}

impl BackendConfig {
    pub fn mock(model_id: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            model_id: model_id.into(),
            endpoint: None,
            auth_env_var: None,
            max_concurrency: 1,
            retry: RetryPolicy::default(),
            timeout_ms: None,
            replay_path: None,
            record: false,
            upstream: None,
            script: None,
            sampling: Sampling::default(),
        }
    }

    pub fn replay(model_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::Replay,
            replay_path: Some(path.into()),
            ..BackendConfig::mock(model_id)
        }
    }

    pub fn remote(model_id: impl Into<String>, endpoint: impl Into<String>, auth_env_var: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            auth_env_var: Some(auth_env_var.into()),
            ..BackendConfig::mock(model_id)
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.model_id.trim().is_empty() {
            return Err(BackendError::Config("model_id is empty".into()));
        }
        if self.max_concurrency == 0 {
            return Err(BackendError::Config("max_concurrency must be positive".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(BackendError::Config("retry.max_attempts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.retry.jitter) {
            return Err(BackendError::Config("retry.jitter must be in [0, 1]".into()));
        }
        match self.kind {
            BackendKind::Remote => {
                if self.endpoint.is_none() {
                    return Err(BackendError::Config("remote backend needs endpoint".into()));
                }
                if self.auth_env_var.is_none() {
                    return Err(BackendError::Config("remote backend needs auth_env_var".into()));
                }
            }
            BackendKind::Replay => {
                if self.replay_path.is_none() {
                    return Err(BackendError::Config("replay backend needs replay_path".into()));
                }
                if self.record && self.upstream.is_none() {
                    return Err(BackendError::Config("record mode needs an upstream backend".into()));
                }
            }
            BackendKind::Mock => {}
        }
        Ok(())
    }

    fn resolve(&self, base_dir: &Path) -> BackendConfig {
        let mut out = self.clone();
        out.replay_path = self.replay_path.as_ref().map(|p| base_dir.join(p));
        out.script = self.script.as_ref().map(|p| base_dir.join(p));
        out
    }
}

struct BackendInner {
    name: String,
    config: BackendConfig,
    client: Box<dyn ModelClient>,
    calls: AtomicUsize,
}

/// A configured, shareable backend handle that counts its calls.
#[derive(Clone)]
pub struct Backend {
    inner: Arc<BackendInner>,
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backend")
            .field("name", &self.inner.name)
            .field("kind", &self.inner.config.kind)
            .field("model_id", &self.inner.config.model_id)
            .finish()
    }
}

impl Backend {
    pub fn new(name: impl Into<String>, config: BackendConfig, client: Box<dyn ModelClient>) -> Self {
        Backend {
            inner: Arc::new(BackendInner {
                name: name.into(),
                config,
                client,
                calls: AtomicUsize::new(0),
            }),
        }
    }

    /// Builds a standalone backend. Replay backends in record mode need
    /// [`BackendSet::build`] to resolve their upstream.
    pub fn from_config(name: &str, config: &BackendConfig) -> Result<Backend, BackendError> {
        config.validate()?;
        let client: Box<dyn ModelClient> = match config.kind {
            BackendKind::Mock => Box::new(MockClient::from_config(config)?),
            BackendKind::Replay => Box::new(ReplayClient::new(
                ReplayStore::open(config.replay_path.as_ref().expect("validated"))?,
                None,
            )),
            BackendKind::Remote => Box::new(RemoteClient::from_config(config)?),
        };
        Ok(Backend::new(name, config.clone(), client))
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn kind(&self) -> BackendKind {
        self.inner.config.kind
    }

    pub fn model_id(&self) -> &str {
        &self.inner.config.model_id
    }

    pub fn max_concurrency(&self) -> usize {
        self.inner.config.max_concurrency
    }

    pub fn config(&self) -> &BackendConfig {
        &self.inner.config
    }

    /// Number of `complete` calls made through this handle.
    pub fn calls(&self) -> usize {
        self.inner.calls.load(Ordering::SeqCst)
    }

    /// A request for this backend's model with its configured sampling.
    pub fn request(&self, messages: Vec<Message>) -> ModelRequest {
        ModelRequest {
            model_id: self.inner.config.model_id.clone(),
            messages,
            sampling: self.inner.config.sampling,
        }
    }

    pub fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        self.inner.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.client.complete(request)
    }
}

/// Completes one request against a freshly built backend.
pub fn complete(config: &BackendConfig, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
    Backend::from_config("adhoc", config)?.complete(request)
}

/// Stores a response in the replay cache named by `config`.
pub fn record(
    config: &BackendConfig,
    request: &ModelRequest,
    response: &ModelResponse,
) -> Result<String, BackendError> {
    let path = config
        .replay_path
        .as_ref()
        .ok_or_else(|| BackendError::Config("record needs replay_path".into()))?;
    ReplayStore::open(path)?.record(request, response)
}

/// All backends of a run, built once so limits and stores are shared.
#[derive(Debug, Clone, Default)]
pub struct BackendSet {
    backends: BTreeMap<String, Backend>,
}

impl BackendSet {
    /// Relative paths in the configs resolve against `base_dir`.
    pub fn build(configs: &BTreeMap<String, BackendConfig>, base_dir: &Path) -> Result<Self, BackendError> {
        let names: Vec<&str> = configs.keys().map(String::as_str).collect();
        BackendSet::build_selected(configs, &names, base_dir)
    }

    /// Builds only `names` and the upstreams they record from, so unused
    /// remote entries never read their credentials.
    pub fn build_selected(
        configs: &BTreeMap<String, BackendConfig>,
        names: &[&str],
        base_dir: &Path,
    ) -> Result<Self, BackendError> {
        let mut set = BackendSet::default();
        let mut visiting = Vec::new();
        for name in names {
            set.build_one(name, configs, base_dir, &mut visiting)?;
        }
        Ok(set)
    }

    fn build_one(
        &mut self,
        name: &str,
        configs: &BTreeMap<String, BackendConfig>,
        base_dir: &Path,
        visiting: &mut Vec<String>,
    ) -> Result<Backend, BackendError> {
        if let Some(b) = self.backends.get(name) {
            return Ok(b.clone());
        }
        if visiting.iter().any(|v| v == name) {
            return Err(BackendError::Config(format!("upstream cycle through {name}")));
        }
        let config = configs
            .get(name)
            .ok_or_else(|| BackendError::Config(format!("unknown backend {name:?}")))?
            .resolve(base_dir);
        config.validate()?;
        let backend = if config.kind == BackendKind::Replay {
            visiting.push(name.to_string());
            let upstream = match (&config.upstream, config.record) {
                (Some(up), true) => Some(self.build_one(up, configs, base_dir, visiting)?),
                _ => None,
            };
            visiting.pop();
            let store = ReplayStore::open(config.replay_path.as_ref().expect("validated"))?;
            Backend::new(name, config, Box::new(ReplayClient::new(store, upstream)))
        } else {
            Backend::from_config(name, &config)?
        };
        self.backends.insert(name.to_string(), backend.clone());
        Ok(backend)
    }

    pub fn get(&self, name: &str) -> Option<&Backend> {
        self.backends.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Backend, BackendError> {
        self.get(name)
            .ok_or_else(|| BackendError::Config(format!("unknown backend {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Backend)> {
        self.backends.iter()
    }

    pub fn total_calls(&self) -> usize {
        self.backends.values().map(|b| b.calls()).sum()
    }
}
