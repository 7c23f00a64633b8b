//! Chat-completion access with a record/replay store.
//!
//! The live backend speaks the OpenAI-compatible chat-completion wire format.
//! Every live exchange can be appended to a [`ReplayStore`], a line-delimited
//! JSON file of `{"key", "request", "response"}` records keyed by the SHA-256
//! of the canonical request. The replay backend serves those records back
//! verbatim, so runs are reproducible offline.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::promptgen::PromptBundle;

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-0125";
/// The only place credentials are read from.
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid decoding parameters: {0}")]
    InvalidParams(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("no recorded response for request {key}")]
    ReplayMiss { key: String },
    #[error("replay store: {0}")]
    Store(String),
}

impl GatewayError {
    /// Errors caused by the network or the remote service.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            GatewayError::Transport { .. }
                | GatewayError::RateLimited { .. }
                | GatewayError::Http { .. }
                | GatewayError::MalformedResponse(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            model_name: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            top_p: 1.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
        }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidParams(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidParams(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        for (name, v) in [
            ("frequency_penalty", self.frequency_penalty),
            ("presence_penalty", self.presence_penalty),
        ] {
            if !(-2.0..=2.0).contains(&v) {
                return Err(GatewayError::InvalidParams(format!("{name} {v} outside [-2, 2]")));
            }
        }
        if self.model_name.is_empty() {
            return Err(GatewayError::InvalidParams("empty model name".into()));
        }
        Ok(())
    }
}

/// One request: the three prompt parts plus decoding parameters. An empty
/// assistant message is omitted on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub assistant: String,
    pub user: String,
    pub params: DecodingParams,
}

impl ChatRequest {
    /// Hex SHA-256 of the request's canonical JSON form.
    pub fn key(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// OpenAI-compatible request body.
    pub fn wire_body(&self) -> serde_json::Value {
        let mut messages = vec![serde_json::json!({"role": "system", "content": self.system})];
        if !self.assistant.is_empty() {
            messages.push(serde_json::json!({"role": "assistant", "content": self.assistant}));
        }
        messages.push(serde_json::json!({"role": "user", "content": self.user}));
        serde_json::json!({
            "model": self.params.model_name,
            "messages": messages,
            "temperature": self.params.temperature,
            "top_p": self.params.top_p,
            "frequency_penalty": self.params.frequency_penalty,
            "presence_penalty": self.params.presence_penalty,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request: ChatRequest,
    pub response_text: String,
    #[serde(with = "millis")]
    pub latency: Duration,
    pub attempt_count: u32,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, GatewayError>;
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreRecord {
    key: String,
    request: ChatRequest,
    response: String,
}

/// Append-only request → response store. Later records for the same key
/// shadow earlier ones.
#[derive(Debug, Default)]
pub struct ReplayStore {
    path: Option<PathBuf>,
    records: RwLock<HashMap<String, String>>,
    file: Mutex<Option<File>>,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a store file and loads its records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let store_err = |e: std::io::Error| GatewayError::Store(format!("{}: {e}", path.display()));
        let mut records = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(store_err)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(store_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: StoreRecord = serde_json::from_str(&line)
                    .map_err(|e| GatewayError::Store(format!("{}:{}: {e}", path.display(), n + 1)))?;
                records.insert(rec.key, rec.response);
            }
        }
        Ok(ReplayStore {
            path: Some(path),
            records: RwLock::new(records),
            file: Mutex::new(None),
        })
    }

    /// Loads a store that must already exist.
    pub fn open_existing(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        if !path.as_ref().exists() {
            return Err(GatewayError::Config(format!(
                "replay store {} does not exist",
                path.as_ref().display()
            )));
        }
        Self::open(path)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.records.read().expect("store lock").get(key).cloned()
    }

    /// Records an exchange, appending one line to the backing file.
    pub fn record(&self, request: &ChatRequest, response: &str) -> Result<(), GatewayError> {
        let key = request.key();
        if let Some(path) = &self.path {
            let mut guard = self.file.lock().expect("store lock");
            if guard.is_none() {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(|e| GatewayError::Store(e.to_string()))?;
                }
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
                *guard = Some(f);
            }
            let rec = StoreRecord {
                key: key.clone(),
                request: request.clone(),
                response: response.to_string(),
            };
            let mut line = serde_json::to_string(&rec).expect("record serializes");
            line.push('\n');
            let file = guard.as_mut().expect("opened above");
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| GatewayError::Store(e.to_string()))?;
        }
        self.records
            .write()
            .expect("store lock")
            .insert(key, response.to_string());
        Ok(())
    }
}

/// Serves recorded responses; never touches the network.
pub struct ReplayBackend {
    store: Arc<ReplayStore>,
}

impl ReplayBackend {
    pub fn new(store: Arc<ReplayStore>) -> Self {
        ReplayBackend { store }
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, GatewayError> {
        let key = request.key();
        let response_text = self.store.get(&key).ok_or(GatewayError::ReplayMiss { key })?;
        Ok(ChatExchange {
            request: request.clone(),
            response_text,
            latency: Duration::ZERO,
            attempt_count: 1,
        })
    }
}

/// Bounded exponential backoff with jitter for transport failures and
/// HTTP 429/5xx.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): `base * 2^(attempt-1)`
    /// plus up to one `base` of jitter, capped at `max_delay`.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1 << (attempt - 1).min(16));
        let jitter = if self.base_delay.is_zero() {
            Duration::ZERO
        } else {
            self.base_delay.mul_f64(rand::rng().random::<f64>())
        };
        (exp + jitter).min(self.max_delay)
    }
}

pub struct LiveBackend {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    recorder: Option<Arc<ReplayStore>>,
}

impl LiveBackend {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Result<Self, GatewayError> {
        let api_key = api_key.into();
        if api_key.trim().is_empty() {
            return Err(GatewayError::Config("empty API key".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(LiveBackend {
            endpoint: endpoint.into(),
            api_key,
            client,
            retry: RetryPolicy::default(),
            recorder: None,
        })
    }

    /// Reads the key from [`API_KEY_ENV`]; fails before any network use when
    /// it is absent.
    pub fn from_env(endpoint: impl Into<String>) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| GatewayError::Config(format!("environment variable {API_KEY_ENV} is not set")))?;
        Self::new(endpoint, key)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Appends every successful exchange to `store`.
    pub fn recording_to(mut self, store: Arc<ReplayStore>) -> Self {
        self.recorder = Some(store);
        self
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<String, Attempt> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string(), None, false))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(Attempt::Retry(
                format!("HTTP {}", status.as_u16()),
                retry_after,
                status.as_u16() == 429,
            ));
        }
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string(), None, false))?;
        if !status.is_success() {
            return Err(Attempt::Fatal(GatewayError::Http {
                status: status.as_u16(),
                body: text,
            }));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(GatewayError::MalformedResponse(e.to_string())))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                Attempt::Fatal(GatewayError::MalformedResponse(
                    "missing choices[0].message.content".into(),
                ))
            })
    }
}

enum Attempt {
    /// message, server-requested delay, rate limited
    Retry(String, Option<Duration>, bool),
    Fatal(GatewayError),
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatExchange, GatewayError> {
        request.params.validate()?;
        let body = request.wire_body();
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.send_once(&body) {
                Ok(response_text) => {
                    if let Some(store) = &self.recorder {
                        store.record(request, &response_text)?;
                    }
                    return Ok(ChatExchange {
                        request: request.clone(),
                        response_text,
                        latency: started.elapsed(),
                        attempt_count: attempt,
                    });
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message, retry_after, rate_limited)) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(if rate_limited {
                            GatewayError::RateLimited { attempts: attempt }
                        } else {
                            GatewayError::Transport {
                                attempts: attempt,
                                message,
                            }
                        });
                    }
                    let delay = retry_after
                        .map(|d| d.min(self.retry.max_delay))
                        .unwrap_or_else(|| self.retry.delay(attempt));
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

/// Sends one request through `backend` after validating the parameters.
pub fn complete(request: &ChatRequest, backend: &dyn ChatBackend) -> Result<ChatExchange, GatewayError> {
    request.params.validate()?;
    backend.complete(request)
}

/// Sends every user batch of `bundle` with at most `max_in_flight`
/// concurrent requests. Results come back in batch order; a failed batch
/// occupies its slot without stopping the others.
pub fn run_batches(
    bundle: &PromptBundle,
    params: &DecodingParams,
    backend: &dyn ChatBackend,
    max_in_flight: usize,
) -> Vec<Result<ChatExchange, GatewayError>> {
    let requests: Vec<ChatRequest> = bundle
        .user_batches
        .iter()
        .map(|b| ChatRequest {
            system: bundle.system_message.clone(),
            assistant: bundle.assistant_message.clone(),
            user: b.text.clone(),
            params: params.clone(),
        })
        .collect();
    let n = requests.len();
    let slots: Vec<Mutex<Option<Result<ChatExchange, GatewayError>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.max(1).min(n);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let result = complete(&requests[i], backend);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}
