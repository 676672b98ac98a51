//! Client for OpenAI-compatible completion servers.
//!
//! Generation posts to `/v1/completions`. Scoring reuses the same endpoint
//! with `echo=true, max_tokens=0, logprobs=0` and keeps the logprobs of the
//! tokens whose `text_offset` lies inside the completion suffix.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest, ScoreRequest, ScoreResult};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Concurrent requests allowed through this client.
    pub max_in_flight: usize,
    pub timeout: Duration,
    /// Total attempts per request; transport failures retry, HTTP errors do not.
    pub attempts: u32,
    pub retry_backoff: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            max_in_flight: 4,
            timeout: Duration::from_secs(120),
            attempts: 3,
            retry_backoff: Duration::from_millis(500),
        }
    }
}

/// Counting gate that holds callers above `limit` until a slot frees.
struct Gate {
    count: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            count: Mutex::new(0),
            freed: Condvar::new(),
            limit: limit.max(1),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut count = self.count.lock().unwrap();
        while *count >= self.limit {
            count = self.freed.wait(count).unwrap();
        }
        *count += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.gate.count.lock().unwrap();
        *count -= 1;
        self.gate.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    endpoint: String,
    gate: Gate,
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a [String]>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    echo: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<LogprobBlock>,
}

#[derive(Deserialize)]
struct LogprobBlock {
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    text_offset: Option<Vec<usize>>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        let trimmed = config.base_url.trim_end_matches('/');
        let endpoint = if trimmed.ends_with("/v1") {
            format!("{trimmed}/completions")
        } else {
            format!("{trimmed}/v1/completions")
        };
        let gate = Gate::new(config.max_in_flight);
        Ok(Self {
            config,
            client,
            endpoint,
            gate,
        })
    }

    fn post(&self, body: &CompletionBody<'_>) -> Result<CompletionResponse, BackendError> {
        let _slot = self.gate.acquire();
        let mut last_transport = String::new();
        for attempt in 0..self.config.attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.retry_backoff * 2u32.pow(attempt - 1));
            }
            let mut req = self.client.post(&self.endpoint).json(body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if !status.is_success() {
                        let mut body = text;
                        body.truncate(2000);
                        return Err(BackendError::Http {
                            status: status.as_u16(),
                            body,
                        });
                    }
                    return serde_json::from_str(&text)
                        .map_err(|e| BackendError::InvalidResponse(e.to_string()));
                }
                Err(e) if e.is_connect() || e.is_timeout() => {
                    last_transport = e.to_string();
                }
                Err(e) => return Err(BackendError::Unreachable(e.to_string())),
            }
        }
        Err(BackendError::Unreachable(format!(
            "{} after {} attempts: {last_transport}",
            self.endpoint, self.config.attempts
        )))
    }

    fn first_choice(resp: CompletionResponse) -> Result<Choice, BackendError> {
        resp.choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::InvalidResponse("response had no choices".into()))
    }
}

impl Backend for HttpBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        let prompt = req.full_prompt();
        let body = CompletionBody {
            model: &self.config.model,
            prompt: &prompt,
            max_tokens: req.max_tokens,
            temperature: req.temperature,
            stop: req.stop.as_deref(),
            echo: false,
            logprobs: None,
        };
        let choice = Self::first_choice(self.post(&body)?)?;
        Ok(choice.text)
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResult, BackendError> {
        let prompt = format!("{}{}", req.context(), req.completion());
        let body = CompletionBody {
            model: &self.config.model,
            prompt: &prompt,
            max_tokens: 0,
            temperature: 0.0,
            stop: None,
            echo: true,
            logprobs: Some(0),
        };
        let choice = Self::first_choice(self.post(&body)?)?;
        let block = choice.logprobs.ok_or(BackendError::UnsupportedByServer)?;
        let values: Vec<f64> = match &block.text_offset {
            Some(offsets) => {
                if offsets.len() != block.token_logprobs.len() {
                    return Err(BackendError::InvalidResponse(
                        "text_offset and token_logprobs length mismatch".into(),
                    ));
                }
                let boundary = req.context().len();
                offsets
                    .iter()
                    .zip(&block.token_logprobs)
                    .filter(|(off, _)| **off >= boundary)
                    .map(|(_, lp)| {
                        lp.ok_or_else(|| {
                            BackendError::InvalidResponse(
                                "null logprob inside completion region".into(),
                            )
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
            None => block.token_logprobs.iter().filter_map(|lp| *lp).collect(),
        };
        ScoreResult::new(values)
    }
}
