//! The episodic-memory temporal knowledge graph: entity nodes, bitemporal
//! fact edges, the bidirectional fact-turn index, and the four online update
//! operations (DUPLICATE / ADD / INVALIDATE / UPDATE).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{MemoryError, Result};
use crate::extract::CandidateEntity;
use crate::model::{cosine, normalize_name, EntityId, EntityNode, FactId, TemporalFact, TurnId};
use crate::time::{TimePoint, TimeRange};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityAction {
    Added,
    Merged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FactAction {
    Duplicate,
    Add,
    Invalidate,
    Update,
}

/// Marks which relations are functional: a subject holds at most one valid
/// object at a time, which is what makes INVALIDATE decidable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationRegistry {
    functional: BTreeSet<String>,
}

impl Default for RelationRegistry {
    fn default() -> Self {
        let seed = [
            "lives_in",
            "works_at",
            "works_for",
            "is_married_to",
            "is_dating",
            "owns_car",
            "favorite_color",
            "employed_by",
        ];
        RelationRegistry { functional: seed.iter().map(|s| s.to_string()).collect() }
    }
}

impl RelationRegistry {
    pub fn empty() -> Self {
        RelationRegistry { functional: BTreeSet::new() }
    }

    pub fn with_functional(mut self, relation: &str) -> Self {
        self.functional.insert(normalize_relation(relation));
        self
    }

    pub fn is_functional(&self, relation: &str) -> bool {
        self.functional.contains(&normalize_relation(relation))
    }

    pub fn from_list(relations: &[String]) -> Self {
        RelationRegistry {
            functional: relations.iter().map(|r| normalize_relation(r)).collect(),
        }
    }
}

pub fn normalize_relation(relation: &str) -> String {
    normalize_name(relation).replace(' ', "_")
}

fn short_hash(input: &str) -> String {
    hex::encode(&Sha256::digest(input.as_bytes())[..8])
}

pub fn entity_id_for(name: &str) -> EntityId {
    format!("e{}", short_hash(&normalize_name(name)))
}

fn fact_id_for(
    subject: &EntityId,
    relation: &str,
    object: &EntityId,
    valid: TimePoint,
    first_turn: &TurnId,
) -> FactId {
    format!(
        "f{}",
        short_hash(&format!("{subject}|{relation}|{object}|{}|{first_turn}", valid.to_iso()))
    )
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TkgStore {
    entities: BTreeMap<EntityId, EntityNode>,
    facts: BTreeMap<FactId, TemporalFact>,
    name_index: BTreeMap<String, EntityId>,
    turn_index: BTreeMap<TurnId, BTreeSet<FactId>>,
}

impl TkgStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entities(&self) -> &BTreeMap<EntityId, EntityNode> {
        &self.entities
    }

    pub fn facts(&self) -> &BTreeMap<FactId, TemporalFact> {
        &self.facts
    }

    pub fn entity(&self, id: &str) -> Option<&EntityNode> {
        self.entities.get(id)
    }

    pub fn fact(&self, id: &str) -> Option<&TemporalFact> {
        self.facts.get(id)
    }

    pub fn entity_by_name(&self, name: &str) -> Option<&EntityNode> {
        self.name_index.get(&normalize_name(name)).and_then(|id| self.entities.get(id))
    }

    pub fn facts_for_turn(&self, turn_id: &str) -> Option<&BTreeSet<FactId>> {
        self.turn_index.get(turn_id)
    }

    /// Adds a new node or merges the mention into an existing one. A merge is
    /// taken on exact normalized-name match, otherwise on name-embedding
    /// cosine >= `theta` against existing entities (best match wins).
    pub fn upsert_entity(
        &mut self,
        cand: &CandidateEntity,
        name_embedding: Vec<f32>,
        theta: f32,
    ) -> Result<(EntityId, EntityAction)> {
        if cand.name.trim().is_empty() {
            return Err(MemoryError::InvalidArgument("entity name must be nonempty".into()));
        }
        let norm = normalize_name(&cand.name);
        let merge_target = match self.name_index.get(&norm) {
            Some(id) => Some(id.clone()),
            None => self
                .entities
                .values()
                .map(|e| (cosine(&name_embedding, &e.name_embedding), e.entity_id.clone()))
                .filter(|(sim, _)| *sim >= theta)
                .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)))
                .map(|(_, id)| id),
        };
        match merge_target {
            Some(id) => {
                let node = self.entities.get_mut(&id).expect("index points at live entity");
                let fragment = cand.summary_fragment.trim();
                if !fragment.is_empty() && !node.summary.contains(fragment) {
                    if node.summary.is_empty() {
                        node.summary = fragment.to_string();
                    } else {
                        node.summary.push_str("; ");
                        node.summary.push_str(fragment);
                    }
                }
                node.mention_turn_ids.insert(cand.source_turn_id.clone());
                Ok((id, EntityAction::Merged))
            }
            None => {
                let id = entity_id_for(&cand.name);
                let node = EntityNode {
                    entity_id: id.clone(),
                    name: cand.name.trim().to_string(),
                    summary: cand.summary_fragment.trim().to_string(),
                    name_embedding,
                    mention_turn_ids: [cand.source_turn_id.clone()].into_iter().collect(),
                };
                self.name_index.insert(norm, id.clone());
                self.entities.insert(id.clone(), node);
                Ok((id, EntityAction::Added))
            }
        }
    }

    pub fn set_entity_summary(&mut self, id: &str, summary: String) -> Result<()> {
        let node = self
            .entities
            .get_mut(id)
            .ok_or_else(|| MemoryError::StoreConsistency(format!("unknown entity {id}")))?;
        node.summary = summary;
        Ok(())
    }

    /// Applies one extracted fact through the four-operation rule table.
    ///
    /// DUPLICATE: same (subject, relation, object) and same valid day — only
    /// provenance grows. UPDATE: same triple, open, different valid day — the
    /// later-reported time wins. INVALIDATE: functional relation, open fact
    /// with a different object, new valid time not earlier — the old fact is
    /// closed at the new valid time and the new fact inserted open. ADD:
    /// everything else. A functional conflict reported with an *earlier*
    /// valid time inserts the new fact already closed at the existing fact's
    /// valid time, so at most one fact per (subject, functional relation)
    /// stays open.
    pub fn apply_fact(
        &mut self,
        subject_id: &str,
        relation: &str,
        object_id: &str,
        valid_time: TimePoint,
        source_turn_id: &str,
    ) -> Result<(FactId, FactAction)> {
        self.apply_fact_with(subject_id, relation, object_id, valid_time, source_turn_id, &RelationRegistry::default())
    }

    pub fn apply_fact_with(
        &mut self,
        subject_id: &str,
        relation: &str,
        object_id: &str,
        valid_time: TimePoint,
        source_turn_id: &str,
        registry: &RelationRegistry,
    ) -> Result<(FactId, FactAction)> {
        if !self.entities.contains_key(subject_id) {
            return Err(MemoryError::StoreConsistency(format!("unknown subject {subject_id}")));
        }
        if !self.entities.contains_key(object_id) {
            return Err(MemoryError::StoreConsistency(format!("unknown object {object_id}")));
        }
        let relation = normalize_relation(relation);
        let valid_time = valid_time.day();

        // Same-triple, same-day match (open or closed): DUPLICATE.
        let same_day = self.facts.values().find(|f| {
            f.subject_id == subject_id
                && f.relation == relation
                && f.object_id == object_id
                && f.valid_time.date() == valid_time.date()
        });
        if let Some(f) = same_day {
            let id = f.fact_id.clone();
            self.append_provenance(&id, source_turn_id);
            return Ok((id, FactAction::Duplicate));
        }

        // Same-triple open fact with a different valid day: UPDATE.
        let same_triple_open = self.facts.values().find(|f| {
            f.subject_id == subject_id
                && f.relation == relation
                && f.object_id == object_id
                && f.is_open()
        });
        if let Some(f) = same_triple_open {
            let id = f.fact_id.clone();
            let old = self.facts.get(&id).unwrap().valid_time;
            log::debug!("UPDATE {id}: valid_time {} -> {}", old, valid_time);
            self.facts.get_mut(&id).unwrap().valid_time = valid_time;
            self.append_provenance(&id, source_turn_id);
            return Ok((id, FactAction::Update));
        }

        // Functional conflict: open fact, same subject+relation, other object.
        let conflicting_open = if registry.is_functional(&relation) {
            self.facts
                .values()
                .find(|f| {
                    f.subject_id == subject_id
                        && f.relation == relation
                        && f.object_id != object_id
                        && f.is_open()
                })
                .map(|f| (f.fact_id.clone(), f.valid_time))
        } else {
            None
        };

        match conflicting_open {
            Some((old_id, old_valid)) if valid_time.date() >= old_valid.date() => {
                self.facts.get_mut(&old_id).unwrap().invalid_time = Some(valid_time);
                let new_id = self.insert_fact(subject_id, &relation, object_id, valid_time, None, source_turn_id);
                Ok((new_id, FactAction::Invalidate))
            }
            Some((_, old_valid)) => {
                // Backfill: an earlier-dated conflicting fact arrives already superseded.
                let new_id = self.insert_fact(
                    subject_id,
                    &relation,
                    object_id,
                    valid_time,
                    Some(old_valid),
                    source_turn_id,
                );
                Ok((new_id, FactAction::Add))
            }
            None => {
                let new_id =
                    self.insert_fact(subject_id, &relation, object_id, valid_time, None, source_turn_id);
                Ok((new_id, FactAction::Add))
            }
        }
    }

    fn insert_fact(
        &mut self,
        subject_id: &str,
        relation: &str,
        object_id: &str,
        valid_time: TimePoint,
        invalid_time: Option<TimePoint>,
        source_turn_id: &str,
    ) -> FactId {
        let id = fact_id_for(
            &subject_id.to_string(),
            relation,
            &object_id.to_string(),
            valid_time,
            &source_turn_id.to_string(),
        );
        let fact = TemporalFact {
            fact_id: id.clone(),
            subject_id: subject_id.to_string(),
            object_id: object_id.to_string(),
            relation: relation.to_string(),
            valid_time,
            invalid_time,
            source_turn_ids: [source_turn_id.to_string()].into_iter().collect(),
        };
        self.turn_index.entry(source_turn_id.to_string()).or_default().insert(id.clone());
        self.facts.insert(id.clone(), fact);
        id
    }

    fn append_provenance(&mut self, fact_id: &str, turn_id: &str) {
        if let Some(f) = self.facts.get_mut(fact_id) {
            f.source_turn_ids.insert(turn_id.to_string());
            self.turn_index.entry(turn_id.to_string()).or_default().insert(fact_id.to_string());
        }
    }

    /// Facts whose validity interval intersects `range`, ordered by
    /// (valid_time, fact_id).
    pub fn facts_valid_in(&self, range: &TimeRange) -> Vec<&TemporalFact> {
        let mut out: Vec<&TemporalFact> = self.facts.values().filter(|f| f.valid_in(range)).collect();
        out.sort_by(|a, b| a.valid_time.cmp(&b.valid_time).then(a.fact_id.cmp(&b.fact_id)));
        out
    }

    /// Union of the facts' provenance turns (the paper's fact-to-turn index).
    pub fn turns_for_facts<'a, I>(&self, facts: I) -> BTreeSet<TurnId>
    where
        I: IntoIterator<Item = &'a TemporalFact>,
    {
        facts
            .into_iter()
            .flat_map(|f| f.source_turn_ids.iter().cloned())
            .collect()
    }

    /// The temporal slice: facts whose `valid_time` lies in `range`
    /// (invalidation does not affect slice membership), plus every entity
    /// appearing as their subject or object.
    pub fn slice(&self, range: &TimeRange) -> (Vec<&TemporalFact>, Vec<&EntityNode>) {
        let facts: Vec<&TemporalFact> = self
            .facts
            .values()
            .filter(|f| range.contains(f.valid_time))
            .collect();
        let mut entity_ids = BTreeSet::new();
        for f in &facts {
            entity_ids.insert(f.subject_id.clone());
            entity_ids.insert(f.object_id.clone());
        }
        let entities = entity_ids
            .iter()
            .filter_map(|id| self.entities.get(id))
            .collect();
        (facts, entities)
    }

    /// Verifies the derived indexes against the primary maps. Used after
    /// snapshot loads and in consistency tests.
    pub fn verify_indexes(&self) -> Result<()> {
        for (norm, id) in &self.name_index {
            let node = self
                .entities
                .get(id)
                .ok_or_else(|| MemoryError::StoreConsistency(format!("name index points at missing {id}")))?;
            if normalize_name(&node.name) != *norm {
                return Err(MemoryError::StoreConsistency(format!(
                    "name index key {norm:?} does not match entity {id}"
                )));
            }
        }
        let mut expected: BTreeMap<TurnId, BTreeSet<FactId>> = BTreeMap::new();
        for f in self.facts.values() {
            if !self.entities.contains_key(&f.subject_id) || !self.entities.contains_key(&f.object_id) {
                return Err(MemoryError::StoreConsistency(format!(
                    "fact {} references missing entity",
                    f.fact_id
                )));
            }
            for t in &f.source_turn_ids {
                expected.entry(t.clone()).or_default().insert(f.fact_id.clone());
            }
        }
        if expected != self.turn_index {
            return Err(MemoryError::StoreConsistency("turn index out of sync".into()));
        }
        Ok(())
    }

    /// Rebuilds name/turn indexes from the primary maps (snapshot load path).
    pub fn from_parts(
        entities: BTreeMap<EntityId, EntityNode>,
        facts: BTreeMap<FactId, TemporalFact>,
    ) -> Result<Self> {
        let mut name_index = BTreeMap::new();
        for (id, node) in &entities {
            if name_index.insert(normalize_name(&node.name), id.clone()).is_some() {
                return Err(MemoryError::CorruptSnapshot(format!(
                    "duplicate normalized entity name {:?}",
                    node.name
                )));
            }
        }
        let mut turn_index: BTreeMap<TurnId, BTreeSet<FactId>> = BTreeMap::new();
        for (id, fact) in &facts {
            for t in &fact.source_turn_ids {
                turn_index.entry(t.clone()).or_default().insert(id.clone());
            }
        }
        let store = TkgStore { entities, facts, name_index, turn_index };
        store.verify_indexes()?;
        Ok(store)
    }
}
