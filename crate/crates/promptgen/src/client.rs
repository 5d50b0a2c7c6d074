//! LLM transport: a neutral JSON POST endpoint, or a fixture directory.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.9;
pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl LlmRequest {
    pub fn new(prompt: String, temperature: f64, max_tokens: u32) -> Result<Self> {
        check_temperature(temperature)?;
        if max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        Ok(Self {
            prompt,
            temperature,
            max_tokens,
        })
    }
}

pub fn check_temperature(t: f64) -> Result<()> {
    if (0.0..=2.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature {t} outside [0, 2]")))
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct LlmResponse {
    pub text: String,
}

/// Something that turns a request into text. `key` is the request's cache
/// key; fixture-backed clients use it to find their answer.
pub trait LlmClient: Sync {
    fn complete(&self, key: &str, request: &LlmRequest) -> Result<LlmResponse, String>;

    /// Requests this client has been asked to serve so far.
    fn calls(&self) -> usize;
}

pub struct HttpClient {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    retries: u32,
    backoff: Duration,
    calls: AtomicUsize,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .new_agent();
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent,
            retries: 3,
            backoff: Duration::from_secs(1),
            calls: AtomicUsize::new(0),
        }
    }

    /// Endpoint from `LLM_ENDPOINT`, bearer token from `LLM_API_KEY`.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var("LLM_ENDPOINT")
            .map_err(|_| Error::Config("LLM_ENDPOINT is not set (use a mock directory for offline runs)".into()))?;
        Ok(Self::new(endpoint, std::env::var("LLM_API_KEY").ok()))
    }

    /// Retries after a transport failure, 429 or 5xx. The wait doubles
    /// after each attempt.
    pub fn with_retries(mut self, retries: u32, first_backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = first_backoff;
        self
    }

    fn attempt(&self, request: &LlmRequest) -> Result<LlmResponse, (bool, String)> {
        let body = serde_json::to_string(request).expect("request serializes");
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| (true, e.to_string()))?;
        if status != 200 {
            let retry = status == 429 || status >= 500;
            return Err((retry, format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        serde_json::from_str(&text).map_err(|e| (false, format!("bad response body: {e}")))
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, _key: &str, request: &LlmRequest) -> Result<LlmResponse, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut wait = self.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err((true, _)) if attempt < self.retries => {
                    attempt += 1;
                    std::thread::sleep(wait);
                    wait *= 2;
                }
                Err((_, msg)) => return Err(format!("{msg} (after {} attempts)", attempt + 1)),
            }
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Serves `<dir>/<key>.txt` verbatim.
pub struct MockClient {
    dir: PathBuf,
    calls: AtomicUsize,
}

impl MockClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            calls: AtomicUsize::new(0),
        }
    }
}

impl LlmClient for MockClient {
    fn complete(&self, key: &str, _request: &LlmRequest) -> Result<LlmResponse, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let path = self.dir.join(format!("{key}.txt"));
        std::fs::read_to_string(&path)
            .map(|text| LlmResponse { text })
            .map_err(|e| format!("fixture {}: {e}", path.display()))
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}
