//! chronomem: a temporal-semantic memory engine for conversational agents.
//!
//! Dialogue turns are distilled into a bitemporal knowledge graph on the
//! *semantic* timeline (when things happened, not when they were said),
//! periodically consolidated into durative Topic/Persona summaries, and
//! queried through time-aware retrieval: parse the question's time range,
//! filter and promote candidates by temporal validity, then rerank
//! lexicographically by (time-valid, similarity).

pub mod config;
pub mod consolidate;
pub mod engine;
pub mod error;
pub mod eval;
pub mod extract;
pub mod gmm;
pub mod model;
pub mod parser;
pub mod persist;
pub mod provider;
pub mod retrieve;
pub mod store;
pub mod time;
pub mod tkg;

pub use config::EngineConfig;
pub use engine::{Engine, IngestReport};
pub use error::{MemoryError, Result};
pub use model::{
    ChatTurn, DurativeMemory, EntityNode, MemoryCandidate, MemoryKind, Query, Speaker,
    TemporalFact,
};
pub use retrieve::{AblationFlags, RetrievalConfig, RetrievalResult};
pub use store::MemoryStore;
pub use time::{TimePoint, TimeRange};
