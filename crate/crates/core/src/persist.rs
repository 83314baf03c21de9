//! Snapshot persistence: a directory of JSONL files plus a manifest.
//!
//! Embeddings are stored as big-endian IEEE-754 hex so a save/load cycle is
//! bit-exact. Saves are atomic at the directory level: everything is written
//! to `<dir>.tmp`, the previous snapshot (if any) is moved aside, and the new
//! directory renamed into place.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{MemoryError, Result};
use crate::model::{ChatTurn, DurativeMemory, EntityNode, TemporalFact};
use crate::store::MemoryStore;
use crate::time::TimePoint;
use crate::tkg::TkgStore;

pub const SCHEMA_VERSION: u32 = 1;

pub fn embedding_to_hex(v: &[f32]) -> String {
    let mut s = String::with_capacity(v.len() * 8);
    for x in v {
        s.push_str(&hex::encode(x.to_be_bytes()));
    }
    s
}

pub fn embedding_from_hex(s: &str) -> Result<Vec<f32>> {
    let bytes = hex::decode(s)
        .map_err(|e| MemoryError::CorruptSnapshot(format!("bad embedding hex: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(MemoryError::CorruptSnapshot("embedding hex length not a multiple of 4 bytes".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    embedding_dim: usize,
    turn_count: usize,
    entity_count: usize,
    fact_count: usize,
    durative_count: usize,
    turns_since_consolidation: u64,
    last_consolidation: Option<TimePoint>,
    dirty_slices: Vec<NaiveDate>,
}

#[derive(Serialize, Deserialize)]
struct TurnRow {
    #[serde(flatten)]
    turn: ChatTurn,
    embedding_hex: String,
}

#[derive(Serialize, Deserialize)]
struct EntityRow {
    entity_id: String,
    name: String,
    summary: String,
    name_embedding_hex: String,
    mention_turn_ids: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct DurativeRow {
    memory_id: String,
    kind: crate::model::MemoryKind,
    slice_start: TimePoint,
    slice_end: TimePoint,
    summary: String,
    embedding_hex: String,
    member_entity_ids: BTreeSet<String>,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for row in rows {
        let line = serde_json::to_string(&row)?;
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
    }
    f.sync_all()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path)
        .map_err(|e| MemoryError::CorruptSnapshot(format!("missing {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: T = serde_json::from_str(&line).map_err(|e| {
            MemoryError::CorruptSnapshot(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        out.push(row);
    }
    Ok(out)
}

/// Saves `store` as a snapshot directory at `dir`, atomically replacing any
/// snapshot already there.
pub fn save_snapshot(store: &MemoryStore, dir: &Path) -> Result<()> {
    let tmp: PathBuf = dir.with_extension("tmp");
    let old: PathBuf = dir.with_extension("old");
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        embedding_dim: store.embedding_dim(),
        turn_count: store.turns().len(),
        entity_count: store.tkg.entities().len(),
        fact_count: store.tkg.facts().len(),
        durative_count: store.durative().len(),
        turns_since_consolidation: store.turns_since_consolidation(),
        last_consolidation: store.last_consolidation(),
        dirty_slices: store.dirty_slices().iter().copied().collect(),
    };
    fs::write(tmp.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    write_jsonl(
        &tmp.join("turns.jsonl"),
        store.turns().values().map(|t| TurnRow {
            turn: t.clone(),
            embedding_hex: embedding_to_hex(
                store.turn_embedding(&t.turn_id).expect("turn has embedding"),
            ),
        }),
    )?;
    write_jsonl(
        &tmp.join("entities.jsonl"),
        store.tkg.entities().values().map(|e| EntityRow {
            entity_id: e.entity_id.clone(),
            name: e.name.clone(),
            summary: e.summary.clone(),
            name_embedding_hex: embedding_to_hex(&e.name_embedding),
            mention_turn_ids: e.mention_turn_ids.clone(),
        }),
    )?;
    write_jsonl(&tmp.join("facts.jsonl"), store.tkg.facts().values().cloned())?;
    write_jsonl(
        &tmp.join("durative.jsonl"),
        store.durative().values().map(|m| DurativeRow {
            memory_id: m.memory_id.clone(),
            kind: m.kind,
            slice_start: m.slice_start,
            slice_end: m.slice_end,
            summary: m.summary.clone(),
            embedding_hex: embedding_to_hex(&m.embedding),
            member_entity_ids: m.member_entity_ids.clone(),
        }),
    )?;

    // Swap into place. A crash before the final rename leaves the previous
    // snapshot intact at either `dir` or `dir.old`.
    if old.exists() {
        fs::remove_dir_all(&old)?;
    }
    let had_previous = dir.exists();
    if had_previous {
        fs::rename(dir, &old)?;
    }
    fs::rename(&tmp, dir).map_err(|e| MemoryError::Save(format!("renaming snapshot: {e}")))?;
    if had_previous {
        fs::remove_dir_all(&old)?;
    }
    Ok(())
}

/// Loads a snapshot directory, rebuilding and verifying derived indexes.
pub fn load_snapshot(dir: &Path) -> Result<MemoryStore> {
    let manifest_raw = fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| MemoryError::CorruptSnapshot(format!("missing manifest: {e}")))?;
    let manifest: Manifest = serde_json::from_str(&manifest_raw)
        .map_err(|e| MemoryError::CorruptSnapshot(format!("bad manifest: {e}")))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(MemoryError::MigrationRequired {
            found: manifest.schema_version,
            supported: SCHEMA_VERSION,
        });
    }

    let mut store = MemoryStore::new(manifest.embedding_dim);

    let turn_rows: Vec<TurnRow> = read_jsonl(&dir.join("turns.jsonl"))?;
    if turn_rows.len() != manifest.turn_count {
        return Err(MemoryError::CorruptSnapshot(format!(
            "manifest says {} turns, file has {}",
            manifest.turn_count,
            turn_rows.len()
        )));
    }
    for row in turn_rows {
        let emb = embedding_from_hex(&row.embedding_hex)?;
        store.add_turn(row.turn, emb).map_err(|e| match e {
            MemoryError::DimensionMismatch { expected, got } => MemoryError::CorruptSnapshot(
                format!("turn embedding dim {got}, manifest says {expected}"),
            ),
            other => other,
        })?;
    }

    let mut entities: BTreeMap<String, EntityNode> = BTreeMap::new();
    for row in read_jsonl::<EntityRow>(&dir.join("entities.jsonl"))? {
        let emb = embedding_from_hex(&row.name_embedding_hex)?;
        entities.insert(
            row.entity_id.clone(),
            EntityNode {
                entity_id: row.entity_id,
                name: row.name,
                summary: row.summary,
                name_embedding: emb,
                mention_turn_ids: row.mention_turn_ids,
            },
        );
    }
    let facts: BTreeMap<String, TemporalFact> = read_jsonl::<TemporalFact>(&dir.join("facts.jsonl"))?
        .into_iter()
        .map(|f| (f.fact_id.clone(), f))
        .collect();
    if entities.len() != manifest.entity_count || facts.len() != manifest.fact_count {
        return Err(MemoryError::CorruptSnapshot("entity/fact counts disagree with manifest".into()));
    }
    store.tkg = TkgStore::from_parts(entities, facts)?;

    let durative_rows: Vec<DurativeRow> = read_jsonl(&dir.join("durative.jsonl"))?;
    if durative_rows.len() != manifest.durative_count {
        return Err(MemoryError::CorruptSnapshot("durative count disagrees with manifest".into()));
    }
    for row in durative_rows {
        let emb = embedding_from_hex(&row.embedding_hex)?;
        store.insert_durative(DurativeMemory {
            memory_id: row.memory_id,
            kind: row.kind,
            slice_start: row.slice_start,
            slice_end: row.slice_end,
            summary: row.summary,
            embedding: emb,
            member_entity_ids: row.member_entity_ids,
        })?;
    }

    store.set_consolidation_state(
        manifest.turns_since_consolidation,
        manifest.last_consolidation,
        manifest.dirty_slices.into_iter().collect(),
    );
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::CandidateEntity;
    use crate::model::{MemoryKind, Speaker};
    use tempfile::tempdir;

    fn tp(s: &str) -> TimePoint {
        TimePoint::parse(s).unwrap()
    }

    fn sample_store() -> MemoryStore {
        let mut store = MemoryStore::new(3);
        store
            .add_turn(
                ChatTurn {
                    turn_id: "t1".into(),
                    session_id: "s1".into(),
                    dialogue_time: tp("2023-05-23"),
                    speaker: Speaker::User,
                    text: "I moved to Berlin".into(),
                },
                vec![0.1, -0.25, 1.0e-7],
            )
            .unwrap();
        let (u, _) = store
            .tkg
            .upsert_entity(
                &CandidateEntity { name: "user".into(), summary_fragment: "the user".into(), source_turn_id: "t1".into() },
                vec![1.0, 0.0, 0.0],
                0.9,
            )
            .unwrap();
        let (b, _) = store
            .tkg
            .upsert_entity(
                &CandidateEntity { name: "Berlin".into(), summary_fragment: "a city".into(), source_turn_id: "t1".into() },
                vec![0.0, 1.0, 0.0],
                0.9,
            )
            .unwrap();
        store.tkg.apply_fact(&u, "lives_in", &b, tp("2023-05-23"), "t1").unwrap();
        store
            .insert_durative(DurativeMemory {
                memory_id: "m1".into(),
                kind: MemoryKind::Topic,
                slice_start: tp("2023-05-01"),
                slice_end: tp("2023-06-01"),
                summary: "moving".into(),
                embedding: vec![0.0, 0.0, 1.0],
                member_entity_ids: [u, b].into_iter().collect(),
            })
            .unwrap();
        store.mark_slice_dirty(tp("2023-05-01").date());
        store
    }

    #[test]
    fn hex_roundtrip_is_bit_exact() {
        let v = vec![0.1f32, -0.0, f32::MIN_POSITIVE, 1.0e-7, 12345.678];
        let hex = embedding_to_hex(&v);
        let back = embedding_from_hex(&hex).unwrap();
        assert_eq!(v.len(), back.len());
        for (a, b) in v.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn snapshot_roundtrip_restores_everything() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("snap");
        let store = sample_store();
        save_snapshot(&store, &path).unwrap();
        let loaded = load_snapshot(&path).unwrap();
        assert_eq!(store, loaded);
        loaded.tkg.verify_indexes().unwrap();
    }

    #[test]
    fn save_over_existing_snapshot() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("snap");
        let mut store = sample_store();
        save_snapshot(&store, &path).unwrap();
        store
            .add_turn(
                ChatTurn {
                    turn_id: "t2".into(),
                    session_id: "s1".into(),
                    dialogue_time: tp("2023-05-24"),
                    speaker: Speaker::Assistant,
                    text: "noted".into(),
                },
                vec![0.0, 0.5, 0.5],
            )
            .unwrap();
        save_snapshot(&store, &path).unwrap();
        let loaded = load_snapshot(&path).unwrap();
        assert_eq!(loaded.turns().len(), 2);
        assert!(!path.with_extension("old").exists());
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn future_schema_requires_migration() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("snap");
        save_snapshot(&sample_store(), &path).unwrap();
        let manifest_path = path.join("manifest.json");
        let raw = fs::read_to_string(&manifest_path).unwrap();
        fs::write(&manifest_path, raw.replace("\"schema_version\": 1", "\"schema_version\": 2")).unwrap();
        let err = load_snapshot(&path);
        assert!(matches!(err, Err(MemoryError::MigrationRequired { found: 2, supported: 1 })));
    }

    #[test]
    fn truncated_jsonl_is_corrupt() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("snap");
        save_snapshot(&sample_store(), &path).unwrap();
        let facts_path = path.join("facts.jsonl");
        let raw = fs::read_to_string(&facts_path).unwrap();
        fs::write(&facts_path, &raw[..raw.len() / 2]).unwrap();
        let err = load_snapshot(&path);
        assert!(matches!(err, Err(MemoryError::CorruptSnapshot(_))));
    }

    #[test]
    fn stale_tmp_dir_from_interrupted_save_is_ignored_and_cleaned() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("snap");
        let store = sample_store();
        save_snapshot(&store, &path).unwrap();
        // Simulate a crash mid-save: a leftover tmp directory with garbage.
        let tmp = path.with_extension("tmp");
        fs::create_dir_all(&tmp).unwrap();
        fs::write(tmp.join("manifest.json"), "{garbage").unwrap();
        // The real snapshot still loads.
        let loaded = load_snapshot(&path).unwrap();
        assert_eq!(store, loaded);
        // And the next save replaces the stale tmp without error.
        save_snapshot(&store, &path).unwrap();
        assert!(!tmp.exists());
    }
}
