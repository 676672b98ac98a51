//! Uniform interface to a text-generation and token-scoring service.
//!
//! [`HttpBackend`] talks to OpenAI-compatible completion servers;
//! [`MockBackend`] replays scripted responses for tests and offline runs.
//! Prompt templating lives in [`template`].

mod http;
mod mock;
pub mod template;

pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MockScript};
pub use template::{PromptTemplate, TemplateError, TemplateName};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("mock script exhausted")]
    ScriptExhausted,
    #[error("server does not support logprobs scoring")]
    UnsupportedByServer,
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
}

/// A single text-generation request.
///
/// `prefix` is a forced continuation seed appended to the prompt; the
/// backend returns only the continuation generated after `prompt ⧺ prefix`.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub prompt: String,
    pub prefix: Option<String>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Option<Vec<String>>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            prefix: None,
            max_tokens: 512,
            temperature: 1.0,
            stop: None,
        }
    }

    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prefix = Some(prefix.into());
        self
    }

    pub fn with_sampling(mut self, max_tokens: u32, temperature: f64) -> Self {
        debug_assert!(max_tokens >= 1);
        debug_assert!(temperature >= 0.0);
        self.max_tokens = max_tokens;
        self.temperature = temperature;
        self
    }

    /// Full text sent to the server: prompt plus any forced prefix.
    pub fn full_prompt(&self) -> String {
        match &self.prefix {
            Some(p) => format!("{}{}", self.prompt, p),
            None => self.prompt.clone(),
        }
    }
}

/// Request for per-token log-likelihood of `completion` given `context`.
#[derive(Debug, Clone)]
pub struct ScoreRequest {
    context: String,
    completion: String,
}

impl ScoreRequest {
    /// Panics if `completion` is empty; scoring an empty completion is a
    /// caller bug.
    pub fn new(context: impl Into<String>, completion: impl Into<String>) -> Self {
        let context = context.into();
        let completion = completion.into();
        assert!(!completion.is_empty(), "score completion must be non-empty");
        Self {
            context,
            completion,
        }
    }

    pub fn context(&self) -> &str {
        &self.context
    }

    pub fn completion(&self) -> &str {
        &self.completion
    }
}

/// Natural-log probabilities of the completion tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResult {
    token_logprobs: Vec<f64>,
}

impl ScoreResult {
    pub fn new(token_logprobs: Vec<f64>) -> Result<Self, BackendError> {
        if token_logprobs.is_empty() {
            return Err(BackendError::InvalidResponse(
                "no completion token logprobs".into(),
            ));
        }
        if token_logprobs.iter().any(|&lp| lp > 0.0 || !lp.is_finite()) {
            return Err(BackendError::InvalidResponse(
                "log-probabilities must be finite and non-positive".into(),
            ));
        }
        Ok(Self { token_logprobs })
    }

    pub fn token_logprobs(&self) -> &[f64] {
        &self.token_logprobs
    }

    pub fn token_count(&self) -> usize {
        self.token_logprobs.len()
    }

    pub fn sum_logprob(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }
}

/// A text-generation and token-scoring service.
///
/// Implementations must be callable from multiple worker threads.
pub trait Backend: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError>;
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResult, BackendError>;
}
