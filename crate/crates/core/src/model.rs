//! Shared domain types: turns, entities, facts, durative memories, candidates.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::time::{TimePoint, TimeRange};

pub type TurnId = String;
pub type EntityId = String;
pub type FactId = String;
pub type MemoryId = String;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

/// One turn of the append-only conversation log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub turn_id: TurnId,
    pub session_id: String,
    pub dialogue_time: TimePoint,
    pub speaker: Speaker,
    pub text: String,
}

/// A node of the temporal knowledge graph: canonical name plus rolling summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityNode {
    pub entity_id: EntityId,
    pub name: String,
    pub summary: String,
    pub name_embedding: Vec<f32>,
    pub mention_turn_ids: BTreeSet<TurnId>,
}

/// A bitemporal edge: (subject, relation, object) valid over `[valid_time, invalid_time)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalFact {
    pub fact_id: FactId,
    pub subject_id: EntityId,
    pub object_id: EntityId,
    pub relation: String,
    pub valid_time: TimePoint,
    pub invalid_time: Option<TimePoint>,
    pub source_turn_ids: BTreeSet<TurnId>,
}

impl TemporalFact {
    pub fn is_open(&self) -> bool {
        self.invalid_time.is_none()
    }

    /// `true` iff the fact's validity interval intersects `range` at day resolution.
    pub fn valid_in(&self, range: &TimeRange) -> bool {
        match range {
            TimeRange::Unconstrained => true,
            TimeRange::Bounded { start, end } => {
                let starts_before_end = self.valid_time.date() < end.date();
                let ends_after_start = match self.invalid_time {
                    None => true,
                    Some(inv) => start.date() < inv.date(),
                };
                starts_before_end && ends_after_start
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryKind {
    Topic,
    Persona,
}

/// A consolidated Topic or Persona record spanning one temporal slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurativeMemory {
    pub memory_id: MemoryId,
    pub kind: MemoryKind,
    pub slice_start: TimePoint,
    pub slice_end: TimePoint,
    pub summary: String,
    pub embedding: Vec<f32>,
    pub member_entity_ids: BTreeSet<EntityId>,
}

impl DurativeMemory {
    pub fn slice(&self) -> TimeRange {
        TimeRange::Bounded { start: self.slice_start, end: self.slice_end }
    }
}

/// What a retrieval candidate points at.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum CandidateRef {
    Topic(MemoryId),
    Persona(MemoryId),
    Turn(TurnId),
}

impl CandidateRef {
    pub fn id(&self) -> &str {
        match self {
            CandidateRef::Topic(id) | CandidateRef::Persona(id) | CandidateRef::Turn(id) => id,
        }
    }

    pub fn is_raw(&self) -> bool {
        matches!(self, CandidateRef::Turn(_))
    }
}

/// The unit the reranker sorts: a retrievable item with its similarity score
/// and temporal-validity flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryCandidate {
    #[serde(rename = "ref")]
    pub target: CandidateRef,
    pub similarity: f32,
    pub time_valid: bool,
    pub tkg_promoted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub issued_at: TimePoint,
}

/// Trim, case-fold, and collapse internal whitespace.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Cosine similarity; equals the dot product for unit vectors.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

pub fn l2_normalize(v: &mut [f32]) {
    let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::TimePoint;

    fn tp(s: &str) -> TimePoint {
        TimePoint::parse(s).unwrap()
    }

    #[test]
    fn normalize_collapses_whitespace_and_case() {
        assert_eq!(normalize_name("  New   York  City "), "new york city");
    }

    #[test]
    fn fact_validity_intersection() {
        let mut f = TemporalFact {
            fact_id: "f1".into(),
            subject_id: "a".into(),
            object_id: "b".into(),
            relation: "visited".into(),
            valid_time: tp("2023-05-23"),
            invalid_time: None,
            source_turn_ids: BTreeSet::new(),
        };
        let r = TimeRange::bounded(tp("2023-05-22"), tp("2023-05-29")).unwrap();
        assert!(f.valid_in(&r));
        f.valid_time = tp("2023-05-10");
        f.invalid_time = Some(tp("2023-05-20"));
        assert!(!f.valid_in(&r));
        f.invalid_time = Some(tp("2023-05-25"));
        assert!(f.valid_in(&r));
    }

    #[test]
    fn cosine_of_unit_vectors_is_dot() {
        let a = vec![1.0, 0.0];
        let b = vec![0.6, 0.8];
        assert!((cosine(&a, &b) - 0.6).abs() < 1e-6);
    }
}
