//! Chat-completion backends: a remote HTTP client and a deterministic
//! scripted mock behind one trait, plus strict parsing of the JSON objects
//! the pipeline asks models to produce.
//!
//! The HTTP side speaks the OpenAI-style `/chat/completions` shape, retries
//! transient failures with jittered exponential backoff, and throttles
//! through a token bucket. The mock replays canned responses keyed by
//! substring matchers and fails loudly on an unmatched prompt, which keeps
//! batch tests deterministic instead of quietly improvising.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

fn validate_chat_request(messages: &[ChatMessage]) -> Result<()> {
    if messages.is_empty() {
        return Err(Error::Validation("chat request has no messages".into()));
    }
    if messages.last().map(|m| m.role) != Some(Role::User) {
        return Err(Error::Validation(
            "chat request must end with a user message".into(),
        ));
    }
    for (i, m) in messages.iter().enumerate() {
        if m.role != Role::System && m.content.is_empty() {
            return Err(Error::Validation(format!("message {i} has empty content")));
        }
    }
    Ok(())
}

/// Connection and sampling settings for one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub requests_per_minute: u32,
    /// First backoff step; doubles per retry up to a 30s ceiling. Tests
    /// shrink it to keep retry paths fast.
    pub initial_backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "http://localhost:8080/v1".into(),
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.7,
            top_p: 0.95,
            max_output_tokens: 1024,
            timeout_secs: 60.0,
            max_retries: 3,
            requests_per_minute: 60,
            initial_backoff_ms: 1000,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.endpoint.trim().is_empty() {
            return Err(Error::Validation("backend endpoint is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Validation(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Validation(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::Validation(
                "max_output_tokens must be positive".into(),
            ));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(Error::Validation("timeout must be positive".into()));
        }
        if self.requests_per_minute == 0 {
            return Err(Error::Validation(
                "requests_per_minute must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Anything that can answer a chat prompt.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String>;
    fn model_name(&self) -> &str;
}

/// Outcome of a prompt whose reply had to satisfy `attempt`.
pub(crate) enum ReplyOutcome<T> {
    Usable(T),
    /// Both the original reply and the reprompted one failed; carries the
    /// final failure.
    Unusable(String),
}

/// Send `prompt`, run `attempt` on the reply, and on a parse or validation
/// failure reprompt once — showing the model its reply and the error —
/// before giving up. Backend failures (including script gaps) propagate
/// unchanged; they are outages, not bad replies.
pub(crate) fn complete_with_reprompt<T>(
    backend: &dyn ChatBackend,
    prompt: String,
    keys_hint: &str,
    attempt: impl Fn(&str) -> Result<T>,
) -> Result<ReplyOutcome<T>> {
    let first = backend.complete(&[ChatMessage::user(prompt.clone())])?;
    let first_err = match attempt(&first) {
        Ok(v) => return Ok(ReplyOutcome::Usable(v)),
        Err(e @ (Error::Parse(_) | Error::Validation(_))) => e,
        Err(e) => return Err(e),
    };
    let follow_up = format!(
        "Your previous reply could not be used ({first_err}). Reply again with exactly one JSON object containing the keys: {keys_hint}. No other text."
    );
    let conversation = vec![
        ChatMessage::user(prompt),
        ChatMessage::assistant(first),
        ChatMessage::user(follow_up),
    ];
    let second = backend.complete(&conversation)?;
    match attempt(&second) {
        Ok(v) => Ok(ReplyOutcome::Usable(v)),
        Err(e @ (Error::Parse(_) | Error::Validation(_))) => {
            Ok(ReplyOutcome::Unusable(e.to_string()))
        }
        Err(e) => Err(e),
    }
}

/// Token bucket: capacity one, refilled at `requests_per_minute / 60` per
/// second, so calls past the first are spaced at the configured rate.
pub struct RateLimiter {
    rate_per_sec: f64,
    state: Mutex<LimiterState>,
}

struct LimiterState {
    tokens: f64,
    last_refill: Instant,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32) -> Self {
        RateLimiter {
            rate_per_sec: f64::from(requests_per_minute.max(1)) / 60.0,
            state: Mutex::new(LimiterState {
                tokens: 1.0,
                last_refill: Instant::now(),
            }),
        }
    }

    /// Block until a request slot is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().expect("limiter poisoned");
                let now = Instant::now();
                let elapsed = now.duration_since(st.last_refill).as_secs_f64();
                st.tokens = (st.tokens + elapsed * self.rate_per_sec).min(1.0);
                st.last_refill = now;
                if st.tokens >= 1.0 {
                    st.tokens -= 1.0;
                    return;
                }
                (1.0 - st.tokens) / self.rate_per_sec
            };
            std::thread::sleep(Duration::from_secs_f64(wait.min(0.5)));
        }
    }
}

const BACKOFF_CAP_MS: u64 = 30_000;

fn backoff_duration(retry_index: u32, base_ms: u64) -> Duration {
    let ceiling = base_ms
        .saturating_mul(1u64.checked_shl(retry_index).unwrap_or(u64::MAX))
        .min(BACKOFF_CAP_MS);
    // Full jitter: uniform over [0, ceiling].
    let ms = if ceiling == 0 {
        0
    } else {
        rand::rng().random_range(0..=ceiling)
    };
    Duration::from_millis(ms)
}

#[derive(Deserialize)]
struct CompletionChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionChoiceMessage,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

enum Attempt {
    Retryable(String),
    Fatal(Error),
}

/// Remote chat-completion backend (OpenAI-style wire shape). Bearer token
/// comes from `COD_FORGE_API_KEY`; proxies follow the standard environment
/// variables.
pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    limiter: RateLimiter,
    api_key: Option<String>,
}

pub const API_KEY_ENV: &str = "COD_FORGE_API_KEY";

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        config.validate()?;
        let agent_config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .build();
        let limiter = RateLimiter::new(config.requests_per_minute);
        Ok(HttpBackend {
            agent: agent_config.new_agent(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            limiter,
            config,
        })
    }

    fn try_once(&self, url: &str, body: &Value) -> std::result::Result<String, Attempt> {
        let mut request = self.agent.post(url);
        if let Some(key) = &self.api_key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        match request.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if (200..300).contains(&status) {
                    let parsed: CompletionResponse = resp.body_mut().read_json().map_err(|e| {
                        Attempt::Fatal(Error::Request(format!("malformed completion body: {e}")))
                    })?;
                    parsed
                        .choices
                        .into_iter()
                        .next()
                        .map(|c| c.message.content)
                        .ok_or_else(|| {
                            Attempt::Fatal(Error::Request("completion had no choices".into()))
                        })
                } else if status == 429 || status >= 500 {
                    Err(Attempt::Retryable(format!("HTTP {status}")))
                } else {
                    Err(Attempt::Fatal(Error::Request(format!(
                        "HTTP {status} from backend"
                    ))))
                }
            }
            Err(e) => {
                if transport_is_retryable(&e) {
                    Err(Attempt::Retryable(e.to_string()))
                } else {
                    Err(Attempt::Fatal(Error::Request(e.to_string())))
                }
            }
        }
    }
}

fn transport_is_retryable(e: &ureq::Error) -> bool {
    matches!(
        e,
        ureq::Error::Io(_)
            | ureq::Error::Timeout(_)
            | ureq::Error::HostNotFound
            | ureq::Error::ConnectionFailed
    )
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        validate_chat_request(messages)?;
        let url = format!(
            "{}/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        );
        let body = serde_json::json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "max_tokens": self.config.max_output_tokens,
        });
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            self.limiter.acquire();
            let failure = match self.try_once(&url, &body) {
                Ok(content) => return Ok(content),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(msg)) => msg,
            };
            if attempts > self.config.max_retries {
                return Err(Error::Backend {
                    attempts,
                    message: failure,
                });
            }
            std::thread::sleep(backoff_duration(
                attempts - 1,
                self.config.initial_backoff_ms,
            ));
        }
    }

    fn model_name(&self) -> &str {
        &self.config.model_name
    }
}

/// One-shot convenience wrapper; batch callers should build an
/// [`HttpBackend`] once and reuse it so the rate limiter applies.
pub fn complete_chat(messages: &[ChatMessage], config: &BackendConfig) -> Result<String> {
    HttpBackend::new(config.clone())?.complete(messages)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScriptEntrySpec {
    matcher: String,
    response: Value,
}

struct ScriptEntry {
    matcher: String,
    response: String,
    consumed: bool,
}

/// Deterministic mock backend: an ordered script of (matcher, response)
/// pairs. Each call concatenates the prompt messages and returns the first
/// unconsumed response whose matcher occurs as a substring; entries are
/// consumed once, so repeated matchers replay in order.
pub struct ScriptedBackend {
    name: String,
    entries: Mutex<Vec<ScriptEntry>>,
}

impl ScriptedBackend {
    pub fn new<M, R>(script: Vec<(M, R)>) -> Result<Self>
    where
        M: Into<String>,
        R: Into<String>,
    {
        if script.is_empty() {
            return Err(Error::Validation("script has no entries".into()));
        }
        let entries = script
            .into_iter()
            .map(|(m, r)| ScriptEntry {
                matcher: m.into(),
                response: r.into(),
                consumed: false,
            })
            .collect();
        Ok(ScriptedBackend {
            name: "scripted".into(),
            entries: Mutex::new(entries),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Script file format: a JSON array of `{"matcher": str, "response": any}`.
    /// String responses are returned verbatim; other JSON values are
    /// serialized compactly.
    pub fn from_json_str(data: &str) -> Result<Self> {
        let specs: Vec<ScriptEntrySpec> = serde_json::from_str(data)
            .map_err(|e| Error::Parse(format!("bad script JSON: {e}")))?;
        let script: Vec<(String, String)> = specs
            .into_iter()
            .map(|s| {
                let response = match s.response {
                    Value::String(text) => text,
                    other => other.to_string(),
                };
                (s.matcher, response)
            })
            .collect();
        ScriptedBackend::new(script)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&data)
    }

    /// Entries not yet replayed — lets tests assert a script ran dry.
    pub fn unconsumed(&self) -> usize {
        self.entries
            .lock()
            .expect("script poisoned")
            .iter()
            .filter(|e| !e.consumed)
            .count()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        validate_chat_request(messages)?;
        let prompt: String = messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let mut entries = self.entries.lock().expect("script poisoned");
        for entry in entries.iter_mut() {
            if !entry.consumed && prompt.contains(&entry.matcher) {
                entry.consumed = true;
                return Ok(entry.response.clone());
            }
        }
        let excerpt: String = prompt.chars().take(160).collect();
        Err(Error::ScriptGap(format!(
            "no unconsumed entry matches prompt starting {excerpt:?}"
        )))
    }

    fn model_name(&self) -> &str {
        &self.name
    }
}

/// Build a scripted backend handle from an ordered (matcher, response) list.
pub fn scripted_complete<M, R>(script: Vec<(M, R)>) -> Result<ScriptedBackend>
where
    M: Into<String>,
    R: Into<String>,
{
    ScriptedBackend::new(script)
}

/// Expected shape of a model's JSON reply.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueKind {
    Text,
    TextList,
    EnumOf(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredOutputSchema {
    required_keys: Vec<(String, ValueKind)>,
}

impl StructuredOutputSchema {
    pub fn new(required_keys: Vec<(String, ValueKind)>) -> Result<Self> {
        if required_keys.is_empty() {
            return Err(Error::Validation("schema has no required keys".into()));
        }
        for (key, kind) in &required_keys {
            if let ValueKind::EnumOf(domain) = kind {
                if domain.is_empty() {
                    return Err(Error::Validation(format!(
                        "enum domain for key {key:?} is empty"
                    )));
                }
            }
        }
        Ok(StructuredOutputSchema { required_keys })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.required_keys.iter().map(|(k, _)| k.as_str())
    }
}

/// A validated field from a model reply.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Text(String),
    List(Vec<String>),
}

impl FieldValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            FieldValue::Text(s) => Some(s),
            FieldValue::List(_) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[String]> {
        match self {
            FieldValue::Text(_) => None,
            FieldValue::List(v) => Some(v),
        }
    }
}

fn balanced_object_len(s: &str) -> Option<usize> {
    let mut depth = 0u32;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Locate the first balanced, parseable JSON object inside free text —
/// models wrap their JSON in prose and code fences.
pub fn extract_first_json_object(text: &str) -> Option<&str> {
    let mut from = 0;
    while let Some(rel) = text[from..].find('{') {
        let start = from + rel;
        if let Some(len) = balanced_object_len(&text[start..]) {
            let candidate = &text[start..start + len];
            if serde_json::from_str::<serde_json::Map<String, Value>>(candidate).is_ok() {
                return Some(candidate);
            }
        }
        from = start + 1;
    }
    None
}

/// Pull the first JSON object out of `text` and validate it against
/// `schema`. Enum values match case-insensitively and come back in the
/// domain's canonical casing; keys not named by the schema are ignored.
pub fn parse_structured_output(
    text: &str,
    schema: &StructuredOutputSchema,
) -> Result<BTreeMap<String, FieldValue>> {
    let source = extract_first_json_object(text)
        .ok_or_else(|| Error::Parse("no JSON object found in reply".into()))?;
    let object: serde_json::Map<String, Value> =
        serde_json::from_str(source).expect("extractor returned valid object");

    let mut record = BTreeMap::new();
    for (key, kind) in &schema.required_keys {
        let value = object
            .get(key)
            .ok_or_else(|| Error::Validation(format!("missing key {key:?}")))?;
        let field = match kind {
            ValueKind::Text => FieldValue::Text(
                value
                    .as_str()
                    .ok_or_else(|| Error::Validation(format!("key {key:?} is not a string")))?
                    .to_string(),
            ),
            ValueKind::TextList => {
                let array = value
                    .as_array()
                    .ok_or_else(|| Error::Validation(format!("key {key:?} is not a list")))?;
                let mut items = Vec::with_capacity(array.len());
                for item in array {
                    items.push(
                        item.as_str()
                            .ok_or_else(|| {
                                Error::Validation(format!("key {key:?} has a non-string element"))
                            })?
                            .to_string(),
                    );
                }
                FieldValue::List(items)
            }
            ValueKind::EnumOf(domain) => {
                let raw = value
                    .as_str()
                    .ok_or_else(|| Error::Validation(format!("key {key:?} is not a string")))?;
                let canonical = domain
                    .iter()
                    .find(|d| d.to_lowercase() == raw.to_lowercase())
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "key {key:?} value {raw:?} not one of {domain:?}"
                        ))
                    })?;
                FieldValue::Text(canonical.clone())
            }
        };
        record.insert(key.clone(), field);
    }
    Ok(record)
}
