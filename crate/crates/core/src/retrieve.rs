//! Query answering: semantic-time parsing, dense top-K over the three memory
//! pools, temporal filtering, TKG-evidence promotion, lexicographic
//! reranking, and context assembly for answer generation.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::Result;
use crate::model::{
    cosine, CandidateRef, MemoryCandidate, MemoryKind, Query, Speaker, TurnId,
};
use crate::parser;
use crate::provider::{prompts, CompletionProvider, CompletionRequest, EmbeddingProvider};
use crate::store::MemoryStore;
use crate::time::TimeRange;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    #[serde(default)]
    pub disable_temporal: bool,
    #[serde(default)]
    pub disable_durative: bool,
    /// Equivalent to both flags: a naive dense retriever over raw turns.
    #[serde(default)]
    pub naive_rag: bool,
}

impl AblationFlags {
    pub fn temporal_off(&self) -> bool {
        self.disable_temporal || self.naive_rag
    }

    pub fn durative_off(&self) -> bool {
        self.disable_durative || self.naive_rag
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub context_budget: usize,
    #[serde(default)]
    pub ablation: AblationFlags,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { top_k: 25, context_budget: 20, ablation: AblationFlags::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub ranked: Vec<MemoryCandidate>,
    pub time_constraint: TimeRange,
    pub promoted_turns: BTreeSet<TurnId>,
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The k highest-cosine items across topics, personas, and raw turns.
/// Ties break toward the lexicographically smaller item id.
pub fn dense_topk(
    store: &MemoryStore,
    query_vec: &[f32],
    k: usize,
    include_durative: bool,
) -> Vec<MemoryCandidate> {
    let mut scored: Vec<MemoryCandidate> = Vec::new();
    if include_durative {
        for m in store.durative().values() {
            let target = match m.kind {
                MemoryKind::Topic => CandidateRef::Topic(m.memory_id.clone()),
                MemoryKind::Persona => CandidateRef::Persona(m.memory_id.clone()),
            };
            scored.push(MemoryCandidate {
                target,
                similarity: cosine(query_vec, &m.embedding),
                time_valid: false,
                tkg_promoted: false,
            });
        }
    }
    for (turn_id, emb) in store.turn_embeddings.iter() {
        scored.push(MemoryCandidate {
            target: CandidateRef::Turn(turn_id.clone()),
            similarity: cosine(query_vec, emb),
            time_valid: false,
            tkg_promoted: false,
        });
    }
    scored.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.target.id().cmp(b.target.id()))
    });
    scored.truncate(k);
    scored
}

/// The paper's Keep filter plus temporal-validity marking. Durative
/// candidates survive only if their slice overlaps `t`; raw turns always
/// survive, with `time_valid` decided by TKG linkage first and dialogue-day
/// containment as fallback.
pub fn temporal_filter(
    store: &MemoryStore,
    cands: Vec<MemoryCandidate>,
    t: &TimeRange,
) -> Vec<MemoryCandidate> {
    cands
        .into_iter()
        .filter_map(|mut c| {
            match &c.target {
                CandidateRef::Topic(id) | CandidateRef::Persona(id) => {
                    let memory = store.durative().get(id)?;
                    if !memory.slice().overlaps(t) {
                        return None;
                    }
                    c.time_valid = true;
                    Some(c)
                }
                CandidateRef::Turn(id) => {
                    if t.is_unconstrained() {
                        c.time_valid = true;
                        return Some(c);
                    }
                    let linked_valid = store
                        .tkg
                        .facts_for_turn(id)
                        .map(|fact_ids| {
                            fact_ids
                                .iter()
                                .filter_map(|fid| store.tkg.fact(fid))
                                .any(|f| f.valid_in(t))
                        })
                        .unwrap_or(false);
                    let dialogue_day_in = store
                        .turn(id)
                        .map(|turn| t.contains(turn.dialogue_time))
                        .unwrap_or(false);
                    c.time_valid = linked_valid || dialogue_day_in;
                    Some(c)
                }
            }
        })
        .collect()
}

/// TKG-evidence promotion: raw candidates whose turn is linked to a fact
/// valid in `t` are marked promoted and time-valid; linked turns missing
/// from the candidate set are appended with freshly computed similarity.
/// Never demotes. Returns the promoted turn set alongside the candidates.
pub fn promote_evidence(
    store: &MemoryStore,
    t: &TimeRange,
    query_vec: &[f32],
    mut cands: Vec<MemoryCandidate>,
) -> (Vec<MemoryCandidate>, BTreeSet<TurnId>) {
    if t.is_unconstrained() {
        return (cands, BTreeSet::new());
    }
    let valid_facts = store.tkg.facts_valid_in(t);
    let evidence_turns = store.tkg.turns_for_facts(valid_facts.into_iter());

    let mut present: BTreeSet<TurnId> = BTreeSet::new();
    for c in cands.iter_mut() {
        if let CandidateRef::Turn(id) = &c.target {
            present.insert(id.clone());
            if evidence_turns.contains(id) {
                c.tkg_promoted = true;
                c.time_valid = true;
            }
        }
    }
    for turn_id in &evidence_turns {
        if present.contains(turn_id) {
            continue;
        }
        let Some(emb) = store.turn_embedding(turn_id) else { continue };
        cands.push(MemoryCandidate {
            target: CandidateRef::Turn(turn_id.clone()),
            similarity: cosine(query_vec, emb),
            time_valid: true,
            tkg_promoted: true,
        });
    }
    (cands, evidence_turns)
}

/// Stable descending lexicographic sort by (time_valid, similarity): all
/// time-valid candidates first, similarity descending within each group,
/// original order preserved on equal keys.
pub fn rerank(mut cands: Vec<MemoryCandidate>) -> Vec<MemoryCandidate> {
    cands.sort_by(|a, b| {
        b.time_valid
            .cmp(&a.time_valid)
            .then_with(|| b.similarity.partial_cmp(&a.similarity).unwrap_or(std::cmp::Ordering::Equal))
    });
    cands
}

/// The documented context assembly format: numbered blocks, durative
/// summaries first, then raw turns, each "[kind | time] text".
pub fn assemble_context(store: &MemoryStore, ranked: &[MemoryCandidate]) -> String {
    let mut blocks: Vec<String> = Vec::new();
    let durative_first = ranked
        .iter()
        .filter(|c| !c.target.is_raw())
        .chain(ranked.iter().filter(|c| c.target.is_raw()));
    for c in durative_first {
        match &c.target {
            CandidateRef::Topic(id) | CandidateRef::Persona(id) => {
                if let Some(m) = store.durative().get(id) {
                    let kind = match m.kind {
                        MemoryKind::Topic => "topic",
                        MemoryKind::Persona => "persona",
                    };
                    blocks.push(format!(
                        "{}. [{kind} | {}..{}] {}",
                        blocks.len() + 1,
                        m.slice_start,
                        m.slice_end,
                        m.summary
                    ));
                }
            }
            CandidateRef::Turn(id) => {
                if let Some(turn) = store.turn(id) {
                    let who = match turn.speaker {
                        Speaker::User => "user",
                        Speaker::Assistant => "assistant",
                    };
                    blocks.push(format!(
                        "{}. [turn | {}] {who}: {}",
                        blocks.len() + 1,
                        turn.dialogue_time.day(),
                        turn.text
                    ));
                }
            }
        }
    }
    blocks.join("\n")
}

/// End-to-end retrieval: parse time, retrieve, filter, promote, rerank,
/// truncate, and generate. Ablation flags bypass stages as configured.
pub fn answer(
    query: &Query,
    store: &MemoryStore,
    cfg: &RetrievalConfig,
    completion: &dyn CompletionProvider,
    embedding: &dyn EmbeddingProvider,
) -> Result<RetrievalResult> {
    let time_constraint = parser::parse_time(&query.text, query.issued_at);
    let query_vec = embedding.embed(&[query.text.clone()])?.remove(0);

    let mut cands = dense_topk(store, &query_vec, cfg.top_k, !cfg.ablation.durative_off());
    let mut promoted_turns = BTreeSet::new();
    if cfg.ablation.temporal_off() {
        // Pure similarity: every candidate counts as time-valid so the
        // lexicographic key degenerates to the similarity order.
        for c in cands.iter_mut() {
            c.time_valid = true;
        }
    } else {
        cands = temporal_filter(store, cands, &time_constraint);
        let (promoted, turns) = promote_evidence(store, &time_constraint, &query_vec, cands);
        cands = promoted;
        promoted_turns = turns;
    }
    let mut ranked = rerank(cands);
    ranked.truncate(cfg.context_budget);

    let evidence = assemble_context(store, &ranked);
    let answer_text = if ranked.is_empty() {
        Some("I have no memory relevant to this question; it was never mentioned.".to_string())
    } else {
        let prompt = prompts::fill(
            prompts::ANSWER,
            &[
                ("now", &query.issued_at.to_iso()),
                ("question", &query.text),
                ("evidence", &evidence),
            ],
        );
        match completion.complete(&CompletionRequest::new(prompt)) {
            Ok(text) => Some(text),
            Err(e) => {
                return Ok(RetrievalResult {
                    ranked,
                    time_constraint,
                    promoted_turns,
                    answer: None,
                    error: Some(e.to_string()),
                });
            }
        }
    };

    Ok(RetrievalResult {
        ranked,
        time_constraint,
        promoted_turns,
        answer: answer_text,
        error: None,
    })
}
