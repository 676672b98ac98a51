//! Runtime configuration: JSON file, environment, and flag layering, plus
//! backend construction from the configured address.
//!
//! Precedence is flags over environment over file over defaults; the CLI
//! applies its flags after [`PipelineConfig::load`] returns.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, HttpBackend, HttpConfig, MockBackend};
use crate::schedule::Hyperparameters;
use crate::synthesis::SynthesisBudget;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Backend address: an HTTP base URL, `mock:<script.json>`, or bare
    /// `mock:` for hash-scored deterministic outputs.
    pub backend_url: String,
    pub model: String,
    pub seed: u64,
    pub workers: usize,
    pub max_tokens: u32,
    pub temperature: f64,
    pub budget: SynthesisBudget,
    /// Few-shot budget: when set, stages use only the first N real pairs.
    pub shots: Option<usize>,
    pub hyper: Hyperparameters,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            backend_url: "http://127.0.0.1:8000".into(),
            model: "local".into(),
            seed: 0,
            workers: 4,
            max_tokens: 512,
            temperature: 1.0,
            budget: SynthesisBudget::default(),
            shots: None,
            hyper: Hyperparameters::default(),
        }
    }
}

impl PipelineConfig {
    /// Loads from a JSON file when given, then overlays `MRDS_BACKEND_URL`
    /// and `MRDS_MODEL` from the environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.into(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: path.into(),
                    source,
                })?
            }
            None => Self::default(),
        };
        if let Ok(url) = std::env::var("MRDS_BACKEND_URL") {
            if !url.is_empty() {
                config.backend_url = url;
            }
        }
        if let Ok(model) = std::env::var("MRDS_MODEL") {
            if !model.is_empty() {
                config.model = model;
            }
        }
        Ok(config)
    }

    /// Builds the configured backend. A `mock:` address never touches the
    /// network; anything else becomes an HTTP client with `MRDS_API_KEY`
    /// applied when set.
    pub fn build_backend(&self) -> Result<Box<dyn Backend>, ConfigError> {
        if let Some(script) = self.backend_url.strip_prefix("mock:") {
            if script.is_empty() {
                return Ok(Box::new(MockBackend::hashed()));
            }
            return Ok(Box::new(MockBackend::from_script_file(Path::new(script))?));
        }
        let mut http = HttpConfig::new(&self.backend_url, &self.model);
        http.api_key = std::env::var("MRDS_API_KEY").ok().filter(|k| !k.is_empty());
        http.max_in_flight = self.workers.max(1);
        Ok(Box::new(HttpBackend::new(http)?))
    }
}
