//! Full memory state: the turn log with embeddings, the TKG, durative
//! memories, and sleep-time consolidation bookkeeping. Mutations go through
//! a single writer (the engine); reads operate on immutable borrows.

use chrono::NaiveDate;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{MemoryError, Result};
use crate::model::{ChatTurn, DurativeMemory, MemoryId, TurnId};
use crate::time::TimePoint;
use crate::tkg::TkgStore;

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryStore {
    embedding_dim: usize,
    pub(crate) turns: BTreeMap<TurnId, ChatTurn>,
    pub(crate) turn_embeddings: BTreeMap<TurnId, Vec<f32>>,
    pub tkg: TkgStore,
    pub(crate) durative: BTreeMap<MemoryId, DurativeMemory>,
    // Consolidation bookkeeping.
    pub(crate) turns_since_consolidation: u64,
    pub(crate) last_consolidation: Option<TimePoint>,
    /// Slice start dates whose underlying facts changed since the last run.
    pub(crate) dirty_slices: BTreeSet<NaiveDate>,
}

impl MemoryStore {
    pub fn new(embedding_dim: usize) -> Self {
        MemoryStore {
            embedding_dim,
            turns: BTreeMap::new(),
            turn_embeddings: BTreeMap::new(),
            tkg: TkgStore::new(),
            durative: BTreeMap::new(),
            turns_since_consolidation: 0,
            last_consolidation: None,
            dirty_slices: BTreeSet::new(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn turns(&self) -> &BTreeMap<TurnId, ChatTurn> {
        &self.turns
    }

    pub fn turn(&self, id: &str) -> Option<&ChatTurn> {
        self.turns.get(id)
    }

    pub fn turn_embedding(&self, id: &str) -> Option<&Vec<f32>> {
        self.turn_embeddings.get(id)
    }

    pub fn durative(&self) -> &BTreeMap<MemoryId, DurativeMemory> {
        &self.durative
    }

    pub fn check_dim(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.embedding_dim {
            return Err(MemoryError::DimensionMismatch { expected: self.embedding_dim, got: v.len() });
        }
        Ok(())
    }

    /// Appends a turn to the log. Re-ingesting an identical turn is a no-op;
    /// a different turn under an existing id is rejected.
    pub fn add_turn(&mut self, turn: ChatTurn, embedding: Vec<f32>) -> Result<bool> {
        self.check_dim(&embedding)?;
        if let Some(existing) = self.turns.get(&turn.turn_id) {
            if *existing == turn {
                return Ok(false);
            }
            return Err(MemoryError::StoreConsistency(format!(
                "turn id {} already exists with different content",
                turn.turn_id
            )));
        }
        self.turn_embeddings.insert(turn.turn_id.clone(), embedding);
        self.turns.insert(turn.turn_id.clone(), turn);
        self.turns_since_consolidation += 1;
        Ok(true)
    }

    pub fn insert_durative(&mut self, memory: DurativeMemory) -> Result<()> {
        self.check_dim(&memory.embedding)?;
        self.durative.insert(memory.memory_id.clone(), memory);
        Ok(())
    }

    /// Atomically replaces the durative memories of the given slices.
    pub fn swap_durative_slices(
        &mut self,
        slice_starts: &BTreeSet<NaiveDate>,
        replacements: Vec<DurativeMemory>,
    ) -> Result<()> {
        for m in &replacements {
            self.check_dim(&m.embedding)?;
        }
        self.durative
            .retain(|_, m| !slice_starts.contains(&m.slice_start.date()));
        for m in replacements {
            self.durative.insert(m.memory_id.clone(), m);
        }
        Ok(())
    }

    pub fn mark_slice_dirty(&mut self, slice_start: NaiveDate) {
        self.dirty_slices.insert(slice_start);
    }

    pub fn dirty_slices(&self) -> &BTreeSet<NaiveDate> {
        &self.dirty_slices
    }

    pub fn turns_since_consolidation(&self) -> u64 {
        self.turns_since_consolidation
    }

    pub fn last_consolidation(&self) -> Option<TimePoint> {
        self.last_consolidation
    }

    /// Restores consolidation bookkeeping from a snapshot.
    pub(crate) fn set_consolidation_state(
        &mut self,
        turns_since: u64,
        last: Option<TimePoint>,
        dirty: BTreeSet<NaiveDate>,
    ) {
        self.turns_since_consolidation = turns_since;
        self.last_consolidation = last;
        self.dirty_slices = dirty;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Speaker;

    fn turn(id: &str) -> ChatTurn {
        ChatTurn {
            turn_id: id.into(),
            session_id: "s".into(),
            dialogue_time: TimePoint::parse("2023-05-01").unwrap(),
            speaker: Speaker::User,
            text: "hi".into(),
        }
    }

    #[test]
    fn dimension_is_frozen_at_creation() {
        let mut store = MemoryStore::new(4);
        assert!(store.add_turn(turn("t1"), vec![0.0; 4]).unwrap());
        let err = store.add_turn(turn("t2"), vec![0.0; 8]);
        assert!(matches!(err, Err(MemoryError::DimensionMismatch { expected: 4, got: 8 })));
    }

    #[test]
    fn replayed_turn_is_noop_and_conflicting_turn_rejected() {
        let mut store = MemoryStore::new(2);
        assert!(store.add_turn(turn("t1"), vec![1.0, 0.0]).unwrap());
        assert!(!store.add_turn(turn("t1"), vec![1.0, 0.0]).unwrap());
        let mut other = turn("t1");
        other.text = "different".into();
        assert!(store.add_turn(other, vec![1.0, 0.0]).is_err());
    }
}
