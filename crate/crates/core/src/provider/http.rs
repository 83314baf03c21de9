//! OpenAI-compatible HTTP backend (chat completions + embeddings).

use serde::Deserialize;
use serde_json::json;
use std::time::Duration;

use crate::error::{MemoryError, Result};
use crate::model::l2_normalize;
use crate::provider::{CompletionProvider, CompletionRequest, EmbeddingProvider, ProviderConfig};

pub struct HttpProvider {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout))
            .build()
            .map_err(|e| MemoryError::Protocol(e.to_string()))?;
        Ok(HttpProvider { config, client })
    }

    fn api_key(&self) -> String {
        std::env::var(&self.config.api_key_env).unwrap_or_default()
    }

    fn post_json(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value> {
        let url = format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path);
        let mut last_err = String::new();
        let attempts = self.config.retry_limit + 1;
        for _ in 0..attempts {
            let resp = self
                .client
                .post(&url)
                .bearer_auth(self.api_key())
                .json(&body)
                .send();
            match resp {
                Ok(r) if r.status().is_success() => {
                    return r
                        .json::<serde_json::Value>()
                        .map_err(|e| MemoryError::Protocol(format!("malformed response: {e}")));
                }
                Ok(r) => {
                    let status = r.status();
                    last_err = format!("HTTP {status}");
                    // Client errors won't improve on retry.
                    if status.is_client_error() {
                        return Err(MemoryError::Protocol(last_err));
                    }
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(MemoryError::Unavailable { attempts, reason: last_err })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl CompletionProvider for HttpProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<String> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let value = self.post_json("chat/completions", body)?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| MemoryError::Protocol(format!("unexpected chat schema: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| MemoryError::Protocol("empty choices array".into()))
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl EmbeddingProvider for HttpProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        if texts.is_empty() {
            return Err(MemoryError::InvalidArgument("embed requires at least one text".into()));
        }
        let body = json!({
            "model": self.config.model_name,
            "input": texts,
        });
        let value = self.post_json("embeddings", body)?;
        let parsed: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| MemoryError::Protocol(format!("unexpected embedding schema: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(MemoryError::Protocol(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        Ok(parsed
            .data
            .into_iter()
            .map(|d| {
                let mut v = d.embedding;
                l2_normalize(&mut v);
                v
            })
            .collect())
    }
}
