//! Engine configuration, loadable from TOML.

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

use crate::consolidate::ConsolidationPolicy;
use crate::error::{MemoryError, Result};
use crate::provider::http::HttpProvider;
use crate::provider::mock::{MockCompletionProvider, MockEmbeddingProvider};
use crate::provider::{ProviderConfig, SharedCompletion, SharedEmbedding};
use crate::retrieve::RetrievalConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderProfile {
    /// Deterministic offline providers; the default for tests and evals.
    Mock,
    /// OpenAI-compatible HTTP endpoints.
    Http,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSection {
    pub profile: ProviderProfile,
    pub completion: ProviderConfig,
    pub embedding: ProviderConfig,
    pub embedding_dim: usize,
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            profile: ProviderProfile::Mock,
            completion: ProviderConfig::default(),
            embedding: ProviderConfig {
                endpoint: "http://localhost:8080/v1/embeddings".into(),
                model_name: "embedding-default".into(),
                ..ProviderConfig::default()
            },
            embedding_dim: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionSection {
    /// How many preceding same-session turns accompany each extraction call.
    pub context_window: usize,
    pub entity_merge_threshold: f32,
    /// Entity summaries longer than this are re-summarized on update.
    pub summary_budget_chars: usize,
    /// Relations treated as functional (at most one valid object at a time).
    pub functional_relations: Vec<String>,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        ExtractionSection {
            context_window: 4,
            entity_merge_threshold: 0.9,
            summary_budget_chars: 1200,
            functional_relations: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub provider: ProviderSection,
    pub retrieval: RetrievalConfig,
    pub consolidation: ConsolidationPolicy,
    pub extraction: ExtractionSection,
    /// Snapshot directory; `None` keeps everything in memory.
    pub store_path: Option<String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            provider: ProviderSection::default(),
            retrieval: RetrievalConfig::default(),
            consolidation: ConsolidationPolicy::default(),
            extraction: ExtractionSection::default(),
            store_path: None,
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MemoryError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MemoryError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| MemoryError::Config(e.to_string()))
    }

    /// Instantiates the completion/embedding providers this config names.
    pub fn build_providers(&self) -> Result<(SharedCompletion, SharedEmbedding)> {
        match self.provider.profile {
            ProviderProfile::Mock => Ok((
                Arc::new(MockCompletionProvider::new()),
                Arc::new(MockEmbeddingProvider::new(self.provider.embedding_dim)),
            )),
            ProviderProfile::Http => Ok((
                Arc::new(HttpProvider::new(self.provider.completion.clone())?),
                Arc::new(HttpProvider::new(self.provider.embedding.clone())?),
            )),
        }
    }
}
