use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::AuthoringError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Time the provider spent answering.
    pub duration_ms: u64,
}

pub trait ChatProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, AuthoringError>;
}

fn default_temperature() -> f64 {
    0.2
}

fn default_max_tokens() -> u32 {
    4096
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub id: String,
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key. Empty for
    /// endpoints that need no key.
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), AuthoringError> {
        if self.id.is_empty() {
            return Err(AuthoringError::Config("provider id is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(AuthoringError::Config(format!(
                "{}: temperature {} outside [0, 2]",
                self.id, self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(AuthoringError::Config(format!("{}: max_tokens must be positive", self.id)));
        }
        Ok(())
    }

    /// A single config object or a list of them; ids must be unique.
    pub fn load_all(path: &Path) -> Result<Vec<ProviderConfig>, AuthoringError> {
        let raw = fs::read(path).map_err(|source| AuthoringError::Attachment { path: path.to_owned(), source })?;
        let value: Value = serde_json::from_slice(&raw).map_err(|e| AuthoringError::Config(e.to_string()))?;
        let configs: Vec<ProviderConfig> = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|c| vec![c])
        }
        .map_err(|e| AuthoringError::Config(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        for c in &configs {
            c.validate()?;
            if !seen.insert(c.id.as_str()) {
                return Err(AuthoringError::Config(format!("provider id `{}` used twice", c.id)));
            }
        }
        Ok(configs)
    }
}

const MAX_RETRIES: u32 = 2;
const EXCERPT_LIMIT: usize = 512;

fn excerpt(body: &str) -> String {
    let mut end = body.len().min(EXCERPT_LIMIT);
    while !body.is_char_boundary(end) {
        end -= 1;
    }
    body[..end].to_owned()
}

/// Chat-completion client over HTTP.
pub struct HttpProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
    /// Delay before the first retry; doubled for each later one.
    pub backoff: Duration,
}

enum Attempt {
    Done(Result<String, AuthoringError>),
    Retry(AuthoringError),
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Self {
        Self::with_timeout(config, Duration::from_secs(300))
    }

    pub fn with_timeout(config: ProviderConfig, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().new_agent();
        HttpProvider { config, agent, backoff: Duration::from_millis(500) }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn api_key(&self) -> Result<Option<String>, AuthoringError> {
        if self.config.api_key_env.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.config.api_key_env) {
            Ok(key) if !key.is_empty() => Ok(Some(key)),
            _ => Err(AuthoringError::AuthMissing(format!("{} is not set", self.config.api_key_env))),
        }
    }

    fn attempt(&self, body: &[u8], key: Option<&str>) -> Attempt {
        let mut req = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(key) = key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e @ (ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed)) => {
                return Attempt::Retry(AuthoringError::Provider { status: None, body: e.to_string() })
            }
            Err(e) => return Attempt::Done(Err(AuthoringError::Provider { status: None, body: e.to_string() })),
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        let err = AuthoringError::Provider { status: Some(status), body: excerpt(&text) };
        match status {
            200..=299 => {
                let content = serde_json::from_str::<Value>(&text)
                    .ok()
                    .and_then(|v| v["choices"][0]["message"]["content"].as_str().map(str::to_owned));
                Attempt::Done(content.ok_or(err))
            }
            401 | 403 => Attempt::Done(Err(AuthoringError::AuthMissing(format!("{}: HTTP {status}", self.config.id)))),
            500..=599 => Attempt::Retry(err),
            _ => Attempt::Done(Err(err)),
        }
    }
}

impl ChatProvider for HttpProvider {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, AuthoringError> {
        let key = self.api_key()?;
        let body = serde_json::to_vec(&json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }))
        .expect("request serializes");
        let start = Instant::now();
        let mut delay = self.backoff;
        for attempt in 0..=MAX_RETRIES {
            match self.attempt(&body, key.as_deref()) {
                Attempt::Done(result) => {
                    return result.map(|text| Completion { text, duration_ms: start.elapsed().as_millis() as u64 })
                }
                Attempt::Retry(err) if attempt == MAX_RETRIES => return Err(err),
                Attempt::Retry(err) => {
                    log::warn!("{}: {err}; retrying in {delay:?}", self.config.id);
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
        unreachable!("the last attempt always returns")
    }
}

/// One request to the provider described by `config`.
pub fn complete(config: &ProviderConfig, messages: &[ChatMessage]) -> Result<String, AuthoringError> {
    config.validate()?;
    HttpProvider::new(config.clone()).complete(messages).map(|c| c.text)
}

/// Hex SHA-256 of the last user message, the key for digest-based mocks.
pub fn prompt_digest(messages: &[ChatMessage]) -> String {
    let prompt = messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str()).unwrap_or("");
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug)]
enum Script {
    Ordered(Mutex<std::vec::IntoIter<String>>),
    ByDigest(BTreeMap<String, String>),
}

/// Offline provider answering from fixed responses.
#[derive(Debug)]
pub struct MockProvider {
    id: String,
    script: Script,
}

impl MockProvider {
    /// Answers the n-th request with `responses[n]`.
    pub fn scripted(id: &str, responses: Vec<String>) -> Self {
        MockProvider { id: id.to_owned(), script: Script::Ordered(Mutex::new(responses.into_iter())) }
    }

    /// Answers by [`prompt_digest`] of the request.
    pub fn by_digest(id: &str, map: BTreeMap<String, String>) -> Self {
        MockProvider { id: id.to_owned(), script: Script::ByDigest(map) }
    }
}

impl ChatProvider for MockProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, AuthoringError> {
        let text = match &self.script {
            Script::Ordered(queue) => queue.lock().expect("mock queue poisoned").next(),
            Script::ByDigest(map) => map.get(&prompt_digest(messages)).cloned(),
        };
        text.map(|text| Completion { text, duration_ms: 0 }).ok_or_else(|| AuthoringError::Provider {
            status: None,
            body: format!("mock `{}` has no response for this request", self.id),
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum MockSpec {
    Responses(Vec<String>),
    Digests(BTreeMap<String, String>),
}

#[derive(Debug, Deserialize)]
struct NamedMock {
    id: String,
    #[serde(default)]
    responses: Option<Vec<String>>,
    #[serde(default)]
    by_digest: Option<BTreeMap<String, String>>,
}

/// Load mock providers from a fixture document: a list of responses, a
/// digest map, or `{"providers": [{"id", "responses" | "by_digest"}]}`.
pub fn load_mock_fixture(raw: &[u8]) -> Result<Vec<MockProvider>, AuthoringError> {
    let value: Value = serde_json::from_slice(raw).map_err(|e| AuthoringError::Config(e.to_string()))?;
    if let Some(list) = value.get("providers") {
        let named: Vec<NamedMock> =
            serde_json::from_value(list.clone()).map_err(|e| AuthoringError::Config(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        return named
            .into_iter()
            .map(|m| {
                if !seen.insert(m.id.clone()) {
                    return Err(AuthoringError::Config(format!("provider id `{}` used twice", m.id)));
                }
                match (m.responses, m.by_digest) {
                    (Some(r), None) => Ok(MockProvider::scripted(&m.id, r)),
                    (None, Some(d)) => Ok(MockProvider::by_digest(&m.id, d)),
                    _ => Err(AuthoringError::Config(format!("mock `{}` needs one of responses or by_digest", m.id))),
                }
            })
            .collect();
    }
    let spec: MockSpec = serde_json::from_value(value).map_err(|e| AuthoringError::Config(e.to_string()))?;
    Ok(vec![match spec {
        MockSpec::Responses(r) => MockProvider::scripted("mock", r),
        MockSpec::Digests(d) => MockProvider::by_digest("mock", d),
    }])
}
