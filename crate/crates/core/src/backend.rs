//! Chat-completion client with retries, an in-flight request cap and an
//! optional record/replay log.
//!
//! Wire format: `POST <endpoint>` with
//! `{model, messages:[{role, content}], temperature, max_tokens, n, [logprobs, top_logprobs], [seed]}`,
//! answered by `{choices:[{message:{content}, logprobs?:{content:[{top_logprobs:[{logprob}]}]}}]}`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub n: usize,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub top_logprobs: Option<u8>,
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        ChatRequest { messages, n: 1, temperature: None, max_tokens: None, top_logprobs: None, seed: None }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_top_logprobs(mut self, k: u8) -> Self {
        self.top_logprobs = Some(k);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatChoice {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<Vec<f64>>>,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<Vec<ChatChoice>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    #[default]
    Off,
    /// Append every successful exchange to the log.
    Record,
    /// Serve exchanges from the log only; never touch the network.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub max_in_flight: usize,
    pub replay_log: Option<PathBuf>,
    pub replay_mode: ReplayMode,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            temperature: 0.7,
            max_tokens: 1024,
            timeout_secs: 60.0,
            max_retries: 3,
            api_key_env: None,
            max_in_flight: 8,
            replay_log: None,
            replay_mode: ReplayMode::Off,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(Error::InvalidConfig("backend timeout must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        if self.replay_mode != ReplayMode::Off && self.replay_log.is_none() {
            return Err(Error::InvalidConfig("replay mode requires replay_log".into()));
        }
        Ok(())
    }
}

struct InFlightGate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl InFlightGate {
    fn new(cap: usize) -> Self {
        InFlightGate { slots: Mutex::new(cap), freed: Condvar::new() }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.slots.lock().expect("gate lock");
        while *free == 0 {
            free = self.freed.wait(free).expect("gate lock");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a InFlightGate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().expect("gate lock") += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Serialize, Deserialize)]
struct ReplayEntry {
    key: String,
    request: Value,
    choices: Vec<ChatChoice>,
}

struct ReplayLog {
    entries: Mutex<HashMap<String, Vec<ChatChoice>>>,
    file: Option<Mutex<File>>,
}

pub struct HttpChatBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
    replay: Option<ReplayLog>,
    retry_base: Duration,
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

impl HttpChatBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("http client: {e}")))?;
        let replay = match (config.replay_mode, &config.replay_log) {
            (ReplayMode::Off, _) | (_, None) => None,
            (mode, Some(path)) => {
                let mut entries = HashMap::new();
                if path.exists() {
                    for line in BufReader::new(File::open(path)?).lines() {
                        let line = line?;
                        if line.trim().is_empty() {
                            continue;
                        }
                        let e: ReplayEntry = serde_json::from_str(&line)?;
                        entries.insert(e.key, e.choices);
                    }
                } else if mode == ReplayMode::Replay {
                    return Err(Error::InvalidConfig(format!("replay log {} does not exist", path.display())));
                }
                let file = if mode == ReplayMode::Record {
                    Some(Mutex::new(OpenOptions::new().create(true).append(true).open(path)?))
                } else {
                    None
                };
                Some(ReplayLog { entries: Mutex::new(entries), file })
            }
        };
        Ok(HttpChatBackend {
            gate: InFlightGate::new(config.max_in_flight),
            config,
            client,
            replay,
            retry_base: Duration::from_millis(200),
        })
    }

    /// Shortens the retry backoff (tests).
    pub fn with_retry_base(mut self, base: Duration) -> Self {
        self.retry_base = base;
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn body(&self, req: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": req.messages,
            "temperature": req.temperature.unwrap_or(self.config.temperature),
            "max_tokens": req.max_tokens.unwrap_or(self.config.max_tokens),
            "n": req.n,
        });
        if let Some(k) = req.top_logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(k);
        }
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn send_once(&self, body: &Value) -> std::result::Result<Vec<ChatChoice>, Attempt> {
        let _slot = self.gate.acquire();
        let mut rb = self.client.post(&self.config.endpoint).json(body);
        if let Some(var) = &self.config.api_key_env {
            if let Ok(token) = std::env::var(var) {
                rb = rb.bearer_auth(token);
            }
        }
        let resp = rb.send().map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("HTTP {status}")));
        }
        let v: Value = resp.json().map_err(|e| Attempt::Retryable(format!("bad body: {e}")))?;
        parse_choices(&v).map_err(Attempt::Fatal)
    }
}

/// Extracts message contents and per-token top log-probabilities.
pub fn parse_choices(v: &Value) -> std::result::Result<Vec<ChatChoice>, String> {
    let choices = v.get("choices").and_then(Value::as_array).ok_or("response has no `choices` array")?;
    Ok(choices
        .iter()
        .map(|c| {
            let content = c.pointer("/message/content").and_then(Value::as_str).unwrap_or("").to_string();
            let logprobs = c.pointer("/logprobs/content").and_then(Value::as_array).map(|toks| {
                toks.iter()
                    .map(|t| {
                        t.get("top_logprobs")
                            .and_then(Value::as_array)
                            .map(|alts| alts.iter().filter_map(|a| a.get("logprob").and_then(Value::as_f64)).collect())
                            .unwrap_or_default()
                    })
                    .collect()
            });
            ChatChoice { content, logprobs }
        })
        .collect())
}

fn request_key(body: &Value) -> String {
    let digest = Sha256::digest(body.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Vec<ChatChoice>> {
        let body = self.body(req);
        let key = request_key(&body);
        if let Some(replay) = &self.replay {
            if let Some(hit) = replay.entries.lock().expect("replay lock").get(&key) {
                return Ok(hit.clone());
            }
            if self.config.replay_mode == ReplayMode::Replay {
                return Err(Error::BackendUnavailable {
                    attempts: 0,
                    reason: format!("request {key} not found in replay log"),
                });
            }
        }

        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.retry_base * 2u32.pow((attempt - 1).min(5));
                std::thread::sleep(backoff.min(Duration::from_secs(10)));
            }
            match self.send_once(&body) {
                Ok(choices) => {
                    if let Some(replay) = &self.replay {
                        replay.entries.lock().expect("replay lock").insert(key.clone(), choices.clone());
                        if let Some(file) = &replay.file {
                            let entry = ReplayEntry { key, request: body, choices: choices.clone() };
                            let mut f = file.lock().expect("replay lock");
                            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
                        }
                    }
                    return Ok(choices);
                }
                Err(Attempt::Fatal(reason)) => return Err(Error::BackendUnavailable { attempts: attempt + 1, reason }),
                Err(Attempt::Retryable(reason)) => {
                    tracing::warn!(attempt = attempt + 1, %reason, "chat backend request failed");
                    last = reason;
                }
            }
        }
        Err(Error::BackendUnavailable { attempts, reason: last })
    }
}
