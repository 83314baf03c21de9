//! Sleep-time consolidation: partitions the TKG into temporal slices,
//! clusters each slice's entities with a GMM, and summarizes every cluster
//! into one Topic and one Persona record.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::gmm;
use crate::model::{DurativeMemory, MemoryKind, Speaker};
use crate::provider::{prompts, CompletionProvider, CompletionRequest, EmbeddingProvider};
use crate::store::MemoryStore;
use crate::time::{shift_month_start, TimePoint, TimeRange};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Week,
    Month,
    Quarter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsolidationPolicy {
    pub granularity: Granularity,
    /// Re-consolidate when this many turns accumulated since the last run.
    pub turn_threshold: u64,
    pub k_max: usize,
    pub seed: u64,
    /// Most recent dialogue turns fed into each persona summary.
    pub persona_turn_cap: usize,
}

impl Default for ConsolidationPolicy {
    fn default() -> Self {
        ConsolidationPolicy {
            granularity: Granularity::Month,
            turn_threshold: 200,
            k_max: 8,
            seed: 0,
            persona_turn_cap: 50,
        }
    }
}

/// Start of the granularity period containing `date`.
pub fn slice_start(granularity: Granularity, date: NaiveDate) -> NaiveDate {
    match granularity {
        Granularity::Week => TimePoint::new(date).week_start(),
        Granularity::Month => NaiveDate::from_ymd_opt(date.year(), date.month(), 1).unwrap(),
        Granularity::Quarter => {
            let q_month = 1 + 3 * ((date.month() - 1) / 3);
            NaiveDate::from_ymd_opt(date.year(), q_month, 1).unwrap()
        }
    }
}

pub fn slice_range(granularity: Granularity, start: NaiveDate) -> TimeRange {
    let end = match granularity {
        Granularity::Week => start + chrono::Duration::days(7),
        Granularity::Month => shift_month_start(start, 1),
        Granularity::Quarter => shift_month_start(start, 3),
    };
    TimeRange::from_dates(start, end).expect("period start precedes period end")
}

fn memory_id(kind: MemoryKind, slice: NaiveDate, members: &BTreeSet<String>) -> String {
    let tag = match kind {
        MemoryKind::Topic => "topic",
        MemoryKind::Persona => "persona",
    };
    let payload = format!("{tag}|{slice}|{}", members.iter().cloned().collect::<Vec<_>>().join(","));
    format!("m{}", hex::encode(&Sha256::digest(payload.as_bytes())[..8]))
}

/// Consolidates one temporal slice into Topic and Persona records.
/// Returns an empty list for slices with no entities.
pub fn consolidate_slice(
    store: &MemoryStore,
    slice: &TimeRange,
    seed: u64,
    policy: &ConsolidationPolicy,
    completion: &dyn CompletionProvider,
    embedding: &dyn EmbeddingProvider,
) -> Result<Vec<DurativeMemory>> {
    let (facts, entities) = store.tkg.slice(slice);
    if entities.is_empty() {
        return Ok(Vec::new());
    }
    let slice_start = slice.start().expect("slice must be bounded");
    let slice_end = slice.end().expect("slice must be bounded");
    let slice_label = format!("{slice_start}..{slice_end}");

    // Entities sorted by id for deterministic point order.
    let mut members: Vec<_> = entities;
    members.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
    let points: Vec<Vec<f32>> = members.iter().map(|e| e.name_embedding.clone()).collect();

    let k = gmm::select_k(&points, policy.k_max, seed)?;
    let model = gmm::fit_gmm(&points, k, seed)?;

    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, p) in points.iter().enumerate() {
        clusters.entry(gmm::assign(&model, p)).or_default().push(idx);
    }

    let mut out = Vec::new();
    for (_, member_idx) in clusters {
        let member_ids: BTreeSet<String> = member_idx
            .iter()
            .map(|&i| members[i].entity_id.clone())
            .collect();

        // Topic: summarize the cluster's (name, summary) pairs.
        let entity_lines = member_idx
            .iter()
            .map(|&i| format!("- {}: {}", members[i].name, members[i].summary))
            .collect::<Vec<_>>()
            .join("\n");
        let topic_prompt = prompts::fill(
            prompts::TOPIC_SUMMARY,
            &[("slice", &slice_label), ("entities", &entity_lines)],
        );
        let topic_summary = completion.complete(&CompletionRequest::new(topic_prompt))?;
        let topic_embedding = embedding.embed(&[topic_summary.clone()])?.remove(0);
        out.push(DurativeMemory {
            memory_id: memory_id(MemoryKind::Topic, slice_start.date(), &member_ids),
            kind: MemoryKind::Topic,
            slice_start,
            slice_end,
            summary: topic_summary,
            embedding: topic_embedding,
            member_entity_ids: member_ids.clone(),
        });

        // Persona: summarize the dialogue turns mentioning the cluster's
        // entities, via the bidirectional entity/turn index.
        let mut turn_ids: BTreeSet<String> = BTreeSet::new();
        for &i in &member_idx {
            turn_ids.extend(members[i].mention_turn_ids.iter().cloned());
        }
        for f in &facts {
            if member_ids.contains(&f.subject_id) || member_ids.contains(&f.object_id) {
                turn_ids.extend(f.source_turn_ids.iter().cloned());
            }
        }
        let mut dialogue: Vec<_> = turn_ids
            .iter()
            .filter_map(|id| store.turn(id))
            .collect();
        dialogue.sort_by(|a, b| {
            b.dialogue_time
                .cmp(&a.dialogue_time)
                .then(a.turn_id.cmp(&b.turn_id))
        });
        dialogue.truncate(policy.persona_turn_cap);
        dialogue.reverse(); // chronological in the prompt
        let dialogue_lines = dialogue
            .iter()
            .map(|t| {
                let who = match t.speaker {
                    Speaker::User => "user",
                    Speaker::Assistant => "assistant",
                };
                format!("[{}] {}: {}", t.dialogue_time, who, t.text)
            })
            .collect::<Vec<_>>()
            .join("\n");
        let persona_prompt = prompts::fill(
            prompts::PERSONA_SUMMARY,
            &[("slice", &slice_label), ("dialogues", &dialogue_lines)],
        );
        let persona_summary = completion.complete(&CompletionRequest::new(persona_prompt))?;
        let persona_embedding = embedding.embed(&[persona_summary.clone()])?.remove(0);
        out.push(DurativeMemory {
            memory_id: memory_id(MemoryKind::Persona, slice_start.date(), &member_ids),
            kind: MemoryKind::Persona,
            slice_start,
            slice_end,
            summary: persona_summary,
            embedding: persona_embedding,
            member_entity_ids: member_ids,
        });
    }
    Ok(out)
}

/// Sleep-time trigger: rebuilds every dirty slice when the turn-count
/// threshold is reached, the granularity period has elapsed, or `force` is
/// set. Replacement is one atomic swap per run. Returns the rebuilt records.
pub fn run_sleep_time(
    store: &mut MemoryStore,
    policy: &ConsolidationPolicy,
    now: TimePoint,
    force: bool,
    completion: &dyn CompletionProvider,
    embedding: &dyn EmbeddingProvider,
) -> Result<Vec<DurativeMemory>> {
    if store.dirty_slices().is_empty() {
        return Ok(Vec::new());
    }
    let period_elapsed = match store.last_consolidation() {
        None => true,
        Some(last) => {
            let next_due = slice_range(policy.granularity, slice_start(policy.granularity, last.date()))
                .end()
                .unwrap();
            now.date() >= next_due.date()
        }
    };
    let triggered = force || store.turns_since_consolidation() >= policy.turn_threshold || period_elapsed;
    if !triggered {
        return Ok(Vec::new());
    }

    let dirty: BTreeSet<NaiveDate> = store.dirty_slices().clone();
    let mut rebuilt = Vec::new();
    for start in &dirty {
        let range = slice_range(policy.granularity, *start);
        rebuilt.extend(consolidate_slice(store, &range, policy.seed, policy, completion, embedding)?);
    }
    store.swap_durative_slices(&dirty, rebuilt.clone())?;
    store.dirty_slices.clear();
    store.turns_since_consolidation = 0;
    store.last_consolidation = Some(now);
    Ok(rebuilt)
}
