//! Text generation and embedding backends. The engine only ever talks to the
//! two traits here; tests and offline runs use the deterministic mock, live
//! runs use the OpenAI-compatible HTTP backend.

pub mod http;
pub mod mock;
pub mod prompts;

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::Result;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest { prompt: prompt.into(), temperature: 0.0, max_tokens: 8192 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_name: String,
    pub api_key_env: String,
    /// Seconds.
    pub request_timeout: u64,
    pub retry_limit: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "http://localhost:8000/v1".into(),
            model_name: "gpt-4o-mini".into(),
            api_key_env: "CHRONOMEM_API_KEY".into(),
            request_timeout: 60,
            retry_limit: 2,
        }
    }
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String>;
}

pub trait EmbeddingProvider: Send + Sync {
    /// One unit-norm vector per input text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

pub type SharedCompletion = Arc<dyn CompletionProvider>;
pub type SharedEmbedding = Arc<dyn EmbeddingProvider>;
