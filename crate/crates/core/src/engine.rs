//! The engine: the single-writer facade tying ingestion, consolidation,
//! retrieval, and persistence together. Wrap it in `RwLock<Engine>` for
//! concurrent use: queries take read access, mutations take write access.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::config::EngineConfig;
use crate::consolidate::{self, slice_start};
use crate::error::Result;
use crate::extract::{self, CandidateEntity, CandidateFact};
use crate::model::{ChatTurn, DurativeMemory, Query, Speaker};
use crate::persist;
use crate::provider::{prompts, CompletionRequest, SharedCompletion, SharedEmbedding};
use crate::retrieve::{self, AblationFlags, RetrievalResult};
use crate::store::MemoryStore;
use crate::time::TimePoint;
use crate::tkg::{EntityAction, FactAction, RelationRegistry};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub turns_ingested: usize,
    pub turns_replayed: usize,
    pub entities_added: usize,
    pub entities_merged: usize,
    /// Per-operation fact tallies keyed by action name.
    pub fact_actions: BTreeMap<String, usize>,
}

impl IngestReport {
    fn absorb(&mut self, other: IngestReport) {
        self.turns_ingested += other.turns_ingested;
        self.turns_replayed += other.turns_replayed;
        self.entities_added += other.entities_added;
        self.entities_merged += other.entities_merged;
        for (k, v) in other.fact_actions {
            *self.fact_actions.entry(k).or_default() += v;
        }
    }
}

pub struct Engine {
    pub store: MemoryStore,
    config: EngineConfig,
    registry: RelationRegistry,
    completion: SharedCompletion,
    embedding: SharedEmbedding,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        let (completion, embedding) = config.build_providers()?;
        Ok(Self::with_providers(config, completion, embedding))
    }

    pub fn with_providers(
        config: EngineConfig,
        completion: SharedCompletion,
        embedding: SharedEmbedding,
    ) -> Self {
        let registry = if config.extraction.functional_relations.is_empty() {
            RelationRegistry::default()
        } else {
            RelationRegistry::from_list(&config.extraction.functional_relations)
        };
        let store = MemoryStore::new(config.provider.embedding_dim);
        Engine { store, config, registry, completion, embedding }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn registry(&self) -> &RelationRegistry {
        &self.registry
    }

    /// Ingests one turn: embeds and logs it, and for user turns extracts
    /// entities and facts into the TKG, marking affected slices dirty.
    pub fn ingest_turn(&mut self, turn: ChatTurn) -> Result<IngestReport> {
        let mut report = IngestReport::default();
        let turn_vec = self.embedding.embed(&[turn.text.clone()])?.remove(0);
        if !self.store.add_turn(turn.clone(), turn_vec)? {
            report.turns_replayed = 1;
            return Ok(report);
        }
        report.turns_ingested = 1;
        if turn.speaker != Speaker::User {
            return Ok(report);
        }

        let context = self.session_context(&turn);
        let (entities, facts) = extract::extract_turn(&turn, &context, self.completion.as_ref())?;
        for cand in &entities {
            self.upsert_entity(cand, &mut report)?;
        }
        for fact in &facts {
            self.apply_fact(fact, &turn, &mut report)?;
        }
        Ok(report)
    }

    pub fn ingest_turns(&mut self, turns: Vec<ChatTurn>) -> Result<IngestReport> {
        let mut report = IngestReport::default();
        for turn in turns {
            report.absorb(self.ingest_turn(turn)?);
        }
        Ok(report)
    }

    /// The last `context_window` same-session turns preceding `turn`.
    fn session_context(&self, turn: &ChatTurn) -> Vec<ChatTurn> {
        let mut prior: Vec<&ChatTurn> = self
            .store
            .turns()
            .values()
            .filter(|t| {
                t.session_id == turn.session_id
                    && t.turn_id != turn.turn_id
                    && (t.dialogue_time, &t.turn_id) < (turn.dialogue_time, &turn.turn_id)
            })
            .collect();
        prior.sort_by(|a, b| {
            (a.dialogue_time, &a.turn_id).cmp(&(b.dialogue_time, &b.turn_id))
        });
        let n = self.config.extraction.context_window;
        let skip = prior.len().saturating_sub(n);
        prior.into_iter().skip(skip).cloned().collect()
    }

    fn upsert_entity(&mut self, cand: &CandidateEntity, report: &mut IngestReport) -> Result<String> {
        let name_vec = self.embedding.embed(&[cand.name.clone()])?.remove(0);
        let (id, action) = self.store.tkg.upsert_entity(
            cand,
            name_vec,
            self.config.extraction.entity_merge_threshold,
        )?;
        match action {
            EntityAction::Added => report.entities_added += 1,
            EntityAction::Merged => report.entities_merged += 1,
        }
        self.maybe_resummarize(&id)?;
        Ok(id)
    }

    /// Re-summarizes an entity whose accumulated notes exceed the budget.
    fn maybe_resummarize(&mut self, entity_id: &str) -> Result<()> {
        let budget = self.config.extraction.summary_budget_chars;
        let Some(node) = self.store.tkg.entity(entity_id) else { return Ok(()) };
        if node.summary.len() <= budget {
            return Ok(());
        }
        let prompt = prompts::fill(
            prompts::ENTITY_SUMMARY,
            &[("name", &node.name), ("notes", &node.summary)],
        );
        let summary = self.completion.complete(&CompletionRequest::new(prompt))?;
        self.store.tkg.set_entity_summary(entity_id, summary)
    }

    fn apply_fact(
        &mut self,
        fact: &CandidateFact,
        turn: &ChatTurn,
        report: &mut IngestReport,
    ) -> Result<()> {
        // Fact endpoints that extraction did not list explicitly become
        // entities with an empty summary.
        let endpoint = |engine: &mut Engine, name: &str, report: &mut IngestReport| {
            match engine.store.tkg.entity_by_name(name) {
                Some(node) => Ok::<_, crate::error::MemoryError>(node.entity_id.clone()),
                None => engine.upsert_entity(
                    &CandidateEntity {
                        name: name.to_string(),
                        summary_fragment: String::new(),
                        source_turn_id: fact.source_turn_id.clone(),
                    },
                    report,
                ),
            }
        };
        let subject_id = endpoint(self, &fact.subject_name, report)?;
        let object_id = endpoint(self, &fact.object_name, report)?;
        let valid_time = fact
            .semantic_time
            .unwrap_or_else(|| extract::default_semantic_time(fact, turn));

        let (fact_id, action) = self.store.tkg.apply_fact_with(
            &subject_id,
            &fact.relation,
            &object_id,
            valid_time,
            &fact.source_turn_id,
            &self.registry,
        )?;
        let name = format!("{action:?}").to_uppercase();
        *report.fact_actions.entry(name).or_default() += 1;

        // An invalidation also changes the closed fact's slice; both the new
        // and old valid times sit in `valid_time`'s slice or earlier, so mark
        // every slice an affected fact's valid_time falls into.
        let gran = self.config.consolidation.granularity;
        self.store.mark_slice_dirty(slice_start(gran, valid_time.date()));
        if action == FactAction::Invalidate || action == FactAction::Update {
            if let Some(f) = self.store.tkg.fact(&fact_id) {
                self.store.mark_slice_dirty(slice_start(gran, f.valid_time.date()));
            }
        }
        Ok(())
    }

    /// Runs sleep-time consolidation. `force` bypasses the trigger check.
    pub fn consolidate(&mut self, now: TimePoint, force: bool) -> Result<Vec<DurativeMemory>> {
        consolidate::run_sleep_time(
            &mut self.store,
            &self.config.consolidation,
            now,
            force,
            self.completion.as_ref(),
            self.embedding.as_ref(),
        )
    }

    /// Answers a query; `ablation` overrides the configured flags when given.
    pub fn query(&self, query: &Query, ablation: Option<AblationFlags>) -> Result<RetrievalResult> {
        let mut cfg = self.config.retrieval.clone();
        if let Some(flags) = ablation {
            cfg.ablation = flags;
        }
        retrieve::answer(query, &self.store, &cfg, self.completion.as_ref(), self.embedding.as_ref())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        persist::save_snapshot(&self.store, dir)
    }

    pub fn load(config: EngineConfig, dir: &Path) -> Result<Self> {
        let (completion, embedding) = config.build_providers()?;
        let mut engine = Engine::with_providers(config, completion, embedding);
        engine.store = persist::load_snapshot(dir)?;
        Ok(engine)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::mock::{MockCompletionProvider, MockEmbeddingProvider};
    use std::sync::Arc;

    fn tp(s: &str) -> TimePoint {
        TimePoint::parse(s).unwrap()
    }

    fn turn(id: &str, when: &str, text: &str) -> ChatTurn {
        ChatTurn {
            turn_id: id.into(),
            session_id: "s1".into(),
            dialogue_time: tp(when),
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    fn engine_with(completion: MockCompletionProvider) -> Engine {
        let mut cfg = EngineConfig::default();
        cfg.provider.embedding_dim = 16;
        Engine::with_providers(cfg, Arc::new(completion), Arc::new(MockEmbeddingProvider::new(16)))
    }

    #[test]
    fn ingest_extracts_and_marks_dirty() {
        let completion = MockCompletionProvider::new().with_rule(
            "Message (sent 2023-05-23):\nI moved to Paris in 2022",
            "ENTITY|Paris|city the user moved to\nFACT|user|lives_in|Paris|in 2022",
        );
        let mut e = engine_with(completion);
        let report = e.ingest_turn(turn("t1", "2023-05-23", "I moved to Paris in 2022")).unwrap();
        assert_eq!(report.turns_ingested, 1);
        assert_eq!(report.entities_added, 2); // Paris plus implicit "user"
        assert_eq!(report.fact_actions.get("ADD"), Some(&1));
        // Fact time resolved from "in 2022" -> slice 2022-01.
        assert!(e.store.dirty_slices().contains(&tp("2022-01-01").date()));
        let fact = e.store.tkg.facts().values().next().unwrap();
        assert_eq!(fact.valid_time, tp("2022-01-01"));

        // Replay is a no-op.
        let replay = e.ingest_turn(turn("t1", "2023-05-23", "I moved to Paris in 2022")).unwrap();
        assert_eq!(replay.turns_replayed, 1);
        assert_eq!(replay.turns_ingested, 0);
        assert_eq!(e.store.turns().len(), 1);
    }

    #[test]
    fn supersession_through_full_pipeline() {
        // Keys anchored to the extraction message header so t1's text inside
        // t2's context window cannot re-trigger the first rule.
        let completion = MockCompletionProvider::new()
            .with_rule("Message (sent 2023-01-10):\nI live in Paris now", "FACT|user|lives_in|Paris|-")
            .with_rule("Message (sent 2023-06-01):\nI just moved to Berlin", "FACT|user|lives_in|Berlin|-");
        let mut e = engine_with(completion);
        e.ingest_turn(turn("t1", "2023-01-10", "I live in Paris now")).unwrap();
        let report = e.ingest_turn(turn("t2", "2023-06-01", "I just moved to Berlin")).unwrap();
        assert_eq!(report.fact_actions.get("INVALIDATE"), Some(&1));
        let open: Vec<_> = e.store.tkg.facts().values().filter(|f| f.is_open()).collect();
        assert_eq!(open.len(), 1);
        let berlin = e.store.tkg.entity_by_name("Berlin").unwrap();
        assert_eq!(open[0].object_id, berlin.entity_id);
    }

    #[test]
    fn end_to_end_query_answers_from_raw_turn() {
        let completion = MockCompletionProvider::new()
            .with_rule("Message (sent 2023-05-23):\nI adopted a cat named Miso", "ENTITY|Miso|the user's cat\nFACT|user|adopted|Miso|-");
        let mut e = engine_with(completion);
        e.ingest_turn(turn("t1", "2023-05-23", "I adopted a cat named Miso")).unwrap();
        e.consolidate(tp("2023-06-02"), true).unwrap();
        assert!(!e.store.durative().is_empty());

        let out = e
            .query(&Query { text: "What cat did I adopt in May 2023?".into(), issued_at: tp("2023-06-05") }, None)
            .unwrap();
        assert!(!out.time_constraint.is_unconstrained());
        let answer = out.answer.unwrap();
        assert!(answer.contains("Miso"), "answer was {answer:?}");
        assert!(out.promoted_turns.contains("t1"));
    }

    #[test]
    fn session_context_window_is_bounded() {
        let mut e = engine_with(MockCompletionProvider::new());
        for i in 0..8 {
            e.ingest_turn(turn(&format!("t{i}"), "2023-05-23", &format!("message {i}"))).unwrap();
        }
        let next = turn("t9", "2023-05-24", "next");
        let ctx = e.session_context(&next);
        assert_eq!(ctx.len(), e.config.extraction.context_window);
        assert_eq!(ctx.last().unwrap().turn_id, "t7");
    }

    #[test]
    fn save_and_load_preserve_state() {
        let completion = MockCompletionProvider::new()
            .with_rule("Message (sent 2023-05-23):\nI adopted a cat named Miso", "ENTITY|Miso|the user's cat\nFACT|user|adopted|Miso|-");
        let mut e = engine_with(completion);
        e.ingest_turn(turn("t1", "2023-05-23", "I adopted a cat named Miso")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap");
        e.save(&path).unwrap();
        let mut cfg = EngineConfig::default();
        cfg.provider.embedding_dim = 16;
        let loaded = Engine::load(cfg, &path).unwrap();
        assert_eq!(loaded.store, e.store);
    }
}
