//! Chat-completions client with a content-addressed cache, retries and
//! bounded concurrency.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::mocksim::DistortionSpec;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "AFFECT_EVAL_API_KEY";

fn default_max_output_tokens() -> u32 {
    256
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_in_flight() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// `http(s)://host/v1` style base, or `mock:<distortion>` for the simulator.
    pub base_url: String,
    #[serde(default)]
    pub model_name: String,
    /// Never serialized; read from [`API_KEY_ENV`] when absent.
    #[serde(skip)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

/// Which completion source an endpoint resolves to.
#[derive(Debug, Clone, PartialEq)]
pub enum EndpointKind {
    Http,
    Mock(DistortionSpec),
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key: None,
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: String| Err(ClientError::Config(m));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive".into());
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad(format!("timeout must be positive, got {}", self.timeout_secs));
        }
        self.kind().map(|_| ())
    }

    pub fn kind(&self) -> Result<EndpointKind, ClientError> {
        match self.base_url.strip_prefix("mock:") {
            Some(spec) => spec
                .parse::<DistortionSpec>()
                .map(EndpointKind::Mock)
                .map_err(ClientError::Config),
            None if self.base_url.starts_with("http://") || self.base_url.starts_with("https://") => {
                Ok(EndpointKind::Http)
            }
            None => Err(ClientError::Config(format!(
                "endpoint `{}` is neither http(s):// nor mock:",
                self.base_url
            ))),
        }
    }

    /// Name used for cache keys: the model name, or the base url when unset.
    pub fn cache_identity(&self) -> &str {
        if self.model_name.is_empty() {
            &self.base_url
        } else {
            &self.model_name
        }
    }

    pub fn chat_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub record_id: String,
    pub prompt_hash: String,
    pub raw_output: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
    /// Failure reason when no output could be obtained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// SHA-256 over model name, temperature and prompt bytes.
pub fn prompt_hash(prompt: &str, model_name: &str, temperature: f64) -> String {
    let mut h = Sha256::new();
    h.update(model_name.as_bytes());
    h.update([0u8]);
    h.update(format!("{temperature:?}").as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedCompletion {
    pub prompt_hash: String,
    pub raw_output: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

pub trait CompletionCache: Sync {
    fn get(&self, prompt_hash: &str) -> Option<CachedCompletion>;
    fn put(&self, entry: &CachedCompletion) -> io::Result<()>;
}

/// Content-addressed JSON files under `root/<2 hex>/<hash>.json`.
#[derive(Debug)]
pub struct DirCache {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl DirCache {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, hash: &str) -> PathBuf {
        let shard = hash.get(..2).unwrap_or("xx");
        self.root.join(shard).join(format!("{hash}.json"))
    }
}

impl CompletionCache for DirCache {
    fn get(&self, prompt_hash: &str) -> Option<CachedCompletion> {
        let bytes = fs::read(self.path_for(prompt_hash)).ok()?;
        serde_json::from_slice::<CachedCompletion>(&bytes)
            .ok()
            .filter(|c| c.prompt_hash == prompt_hash)
    }

    fn put(&self, entry: &CachedCompletion) -> io::Result<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.path_for(&entry.prompt_hash);
        let dir = path.parent().expect("sharded path");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.tmp", entry.prompt_hash));
        fs::write(&tmp, serde_json::to_vec_pretty(entry)?)?;
        fs::rename(tmp, path)
    }
}

#[derive(Debug, Default)]
pub struct MemoryCache(Mutex<HashMap<String, CachedCompletion>>);

impl MemoryCache {
    pub fn len(&self) -> usize {
        self.0.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CompletionCache for MemoryCache {
    fn get(&self, prompt_hash: &str) -> Option<CachedCompletion> {
        self.0.lock().unwrap().get(prompt_hash).cloned()
    }

    fn put(&self, entry: &CachedCompletion) -> io::Result<()> {
        self.0
            .lock()
            .unwrap()
            .insert(entry.prompt_hash.clone(), entry.clone());
        Ok(())
    }
}

/// Cache that never hits.
#[derive(Debug, Default)]
pub struct NoCache;

impl CompletionCache for NoCache {
    fn get(&self, _: &str) -> Option<CachedCompletion> {
        None
    }

    fn put(&self, _: &CachedCompletion) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("authentication rejected (HTTP {0}): {1}")]
    Unauthorized(u16, String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("server error HTTP {0}: {1}")]
    Server(u16, String),
    #[error("request rejected HTTP {0}: {1}")]
    Rejected(u16, String),
    #[error("timed out")]
    Timeout,
    #[error("network error: {0}")]
    Network(String),
    #[error("unexpected response body: {0}")]
    BadResponse(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        matches!(
            self,
            TransportError::RateLimited { .. }
                | TransportError::Server(..)
                | TransportError::Timeout
                | TransportError::Network(_)
        )
    }
}

/// Sends one prompt and returns the assistant message text.
pub trait Transport: Sync {
    fn send(&self, cfg: &EndpointConfig, prompt: &str) -> Result<String, TransportError>;
}

/// Request body for `POST {base_url}/chat/completions`.
pub fn request_body(cfg: &EndpointConfig, prompt: &str) -> Value {
    serde_json::json!({
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
    })
}

/// Pull `choices[0].message.content` out of a response body.
pub fn response_content(body: &str) -> Result<String, TransportError> {
    let v: Value = serde_json::from_str(body).map_err(|e| TransportError::BadResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TransportError::BadResponse("missing choices[0].message.content".into()))
}

pub struct HttpTransport {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpTransport {
    /// Uses `cfg.api_key`, falling back to the environment.
    pub fn new(cfg: &EndpointConfig) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build();
        let api_key = cfg
            .api_key
            .clone()
            .or_else(|| std::env::var(API_KEY_ENV).ok())
            .filter(|k| !k.is_empty());
        Self {
            agent: config.into(),
            api_key,
        }
    }
}

fn classify_ureq(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        other => TransportError::Network(other.to_string()),
    }
}

impl Transport for HttpTransport {
    fn send(&self, cfg: &EndpointConfig, prompt: &str) -> Result<String, TransportError> {
        let body = request_body(cfg, prompt).to_string();
        let mut req = self
            .agent
            .post(cfg.chat_url())
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body.as_bytes()).map_err(classify_ureq)?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(classify_ureq)?;
        match status {
            200..=299 => response_content(&text),
            401 | 403 => Err(TransportError::Unauthorized(status, text)),
            429 => Err(TransportError::RateLimited { retry_after }),
            500..=599 => Err(TransportError::Server(status, text)),
            _ => Err(TransportError::Rejected(status, text)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("endpoint configuration: {0}")]
    Config(String),
    #[error("authentication failed: {0}")]
    Auth(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BatchStats {
    pub requests: usize,
    pub cache_hits: usize,
    /// HTTP attempts, retries included.
    pub network_calls: usize,
    pub errors: usize,
}

impl BatchStats {
    pub fn merge(&mut self, other: &BatchStats) {
        self.requests += other.requests;
        self.cache_hits += other.cache_hits;
        self.network_calls += other.network_calls;
        self.errors += other.errors;
    }
}

const MAX_BACKOFF: Duration = Duration::from_secs(60);

fn backoff_delay(cfg: &EndpointConfig, attempt: u32, err: &TransportError) -> Duration {
    if let TransportError::RateLimited {
        retry_after: Some(d),
    } = err
    {
        return (*d).min(MAX_BACKOFF);
    }
    let factor = 1u64 << (attempt.saturating_sub(1)).min(16);
    Duration::from_millis(cfg.backoff_ms.saturating_mul(factor)).min(MAX_BACKOFF)
}

struct Outcome {
    record: CompletionRecord,
    calls: usize,
}

fn complete_one(
    id: &str,
    prompt: &str,
    hash: String,
    cfg: &EndpointConfig,
    transport: &dyn Transport,
    abort: &AtomicBool,
) -> Result<Outcome, ClientError> {
    let started = Instant::now();
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        let result = transport.send(cfg, prompt);
        let record = |raw_output: String, error: Option<String>| CompletionRecord {
            record_id: id.to_string(),
            prompt_hash: hash.clone(),
            raw_output,
            latency_ms: started.elapsed().as_millis() as u64,
            attempt_count: attempt,
            error,
        };
        match result {
            Ok(text) => {
                return Ok(Outcome {
                    record: record(text, None),
                    calls: attempt as usize,
                })
            }
            Err(TransportError::Unauthorized(status, body)) => {
                return Err(ClientError::Auth(format!("HTTP {status}: {body}")))
            }
            Err(e) if e.retryable() && attempt <= cfg.max_retries && !abort.load(Ordering::Relaxed) => {
                let delay = backoff_delay(cfg, attempt, &e);
                log::debug!("{id}: attempt {attempt} failed ({e}); retrying in {delay:?}");
                std::thread::sleep(delay);
            }
            Err(e) => {
                log::warn!("{id}: giving up after {attempt} attempt(s): {e}");
                return Ok(Outcome {
                    record: record(String::new(), Some(e.to_string())),
                    calls: attempt as usize,
                });
            }
        }
    }
}

/// Complete every `(id, prompt)` pair. Output order follows input order.
///
/// Cache hits skip the network. Items that still fail after
/// `cfg.max_retries` come back as records with `error` set; an
/// authentication failure aborts the whole batch.
pub fn complete_batch(
    prompts: &[(String, String)],
    cfg: &EndpointConfig,
    cache: &dyn CompletionCache,
    transport: &dyn Transport,
) -> Result<(Vec<CompletionRecord>, BatchStats), ClientError> {
    cfg.validate()?;
    let mut stats = BatchStats {
        requests: prompts.len(),
        ..Default::default()
    };
    let mut slots: Vec<Option<CompletionRecord>> = vec![None; prompts.len()];
    let mut pending: Vec<(usize, String)> = Vec::new();
    for (i, (id, prompt)) in prompts.iter().enumerate() {
        let hash = prompt_hash(prompt, cfg.cache_identity(), cfg.temperature);
        match cache.get(&hash) {
            Some(hit) => {
                stats.cache_hits += 1;
                slots[i] = Some(CompletionRecord {
                    record_id: id.clone(),
                    prompt_hash: hit.prompt_hash,
                    raw_output: hit.raw_output,
                    latency_ms: hit.latency_ms,
                    attempt_count: hit.attempt_count,
                    error: None,
                });
            }
            None => pending.push((i, hash)),
        }
    }

    if !pending.is_empty() {
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let calls = AtomicUsize::new(0);
        let results: Mutex<Vec<(usize, CompletionRecord)>> = Mutex::new(Vec::with_capacity(pending.len()));
        let fatal: Mutex<Option<ClientError>> = Mutex::new(None);
        let workers = cfg.max_in_flight.min(pending.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if abort.load(Ordering::Relaxed) {
                        break;
                    }
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    let Some((i, hash)) = pending.get(k) else { break };
                    let (id, prompt) = &prompts[*i];
                    match complete_one(id, prompt, hash.clone(), cfg, transport, &abort) {
                        Ok(outcome) => {
                            calls.fetch_add(outcome.calls, Ordering::Relaxed);
                            if outcome.record.error.is_none() {
                                let entry = CachedCompletion {
                                    prompt_hash: outcome.record.prompt_hash.clone(),
                                    raw_output: outcome.record.raw_output.clone(),
                                    latency_ms: outcome.record.latency_ms,
                                    attempt_count: outcome.record.attempt_count,
                                };
                                if let Err(e) = cache.put(&entry) {
                                    log::warn!("cache write failed for {id}: {e}");
                                }
                            }
                            results.lock().unwrap().push((*i, outcome.record));
                        }
                        Err(e) => {
                            calls.fetch_add(1, Ordering::Relaxed);
                            abort.store(true, Ordering::Relaxed);
                            fatal.lock().unwrap().get_or_insert(e);
                            break;
                        }
                    }
                });
            }
        });
        if let Some(e) = fatal.into_inner().unwrap() {
            return Err(e);
        }
        stats.network_calls = calls.into_inner();
        for (i, record) in results.into_inner().unwrap() {
            slots[i] = Some(record);
        }
    }

    let records: Vec<CompletionRecord> = slots
        .into_iter()
        .map(|r| r.expect("every prompt completed"))
        .collect();
    stats.errors = records.iter().filter(|r| r.error.is_some()).count();
    Ok((records, stats))
}

/// One line of a prompts file: the rendered prompt plus the dimensions it asks for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRow {
    pub id: String,
    pub prompt: String,
    pub dimensions: Vec<crate::dimension::Dimension>,
}
