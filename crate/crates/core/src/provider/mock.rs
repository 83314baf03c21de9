//! Deterministic offline providers.
//!
//! The completion mock resolves a prompt in this order: exact fixture match,
//! substring rules, then built-in handlers keyed on the template tag line
//! (extraction, summaries, answer generation, judging), then an echo digest.
//! The judge handlers implement rule-based string containment; they make no
//! claim to approximate LLM judging quality.

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{MemoryError, Result};
use crate::model::{l2_normalize, normalize_name};
use crate::provider::{CompletionProvider, CompletionRequest, EmbeddingProvider};

fn sha_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Default)]
pub struct MockCompletionProvider {
    exact: Mutex<BTreeMap<String, String>>,
    rules: Mutex<Vec<(String, String)>>,
}

impl MockCompletionProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a fixed response for one exact prompt.
    pub fn with_response(self, prompt: &str, response: &str) -> Self {
        self.exact.lock().unwrap().insert(sha_hex(prompt), response.to_string());
        self
    }

    /// Registers a response returned for any prompt containing `key`.
    /// Rules are checked in insertion order; first match wins.
    pub fn with_rule(self, key: &str, response: &str) -> Self {
        self.rules.lock().unwrap().push((key.to_string(), response.to_string()));
        self
    }

    pub fn add_rule(&self, key: &str, response: &str) {
        self.rules.lock().unwrap().push((key.to_string(), response.to_string()));
    }

    fn builtin(&self, prompt: &str) -> Option<String> {
        if prompt.contains("TASK: EXTRACT-V1") {
            return Some("NONE".to_string());
        }
        if prompt.contains("TASK: SUMMARIZE-") {
            let payload = prompt.split("INPUT:").nth(1).unwrap_or("");
            let mut text = normalize_text(payload);
            text.truncate(300);
            return Some(format!("[summary {}] {}", &sha_hex(payload)[..8], text));
        }
        if prompt.contains("TASK: ANSWER-V1") {
            return Some(mock_answer(prompt));
        }
        if prompt.contains("Is the model response correct? Answer yes or no only.") {
            let gold = field(prompt, &["Correct Answer:", "Rubric:"])?;
            let resp = field(prompt, &["Model Response:"])?;
            return Some(if contains_normalized(&resp, &gold) { "yes" } else { "no" }.into());
        }
        if prompt.contains("Does the model correctly identify the question as unanswerable?") {
            let resp = field(prompt, &["Model Response:"])?;
            let r = normalize_text(&resp);
            let abstained = ["never mentioned", "not mentioned", "no memory", "cannot", "don't know", "do not know", "no information", "was never"]
                .iter()
                .any(|p| r.contains(p));
            return Some(if abstained { "yes" } else { "no" }.into());
        }
        if prompt.contains("label an answer to a question as 'CORRECT' or 'WRONG'") {
            // The template carries an illustrative "Gold answer:" example;
            // the real fields are the last occurrences.
            let tail = &prompt[prompt.rfind("Gold answer:").unwrap_or(0)..];
            let gold = field(tail, &["Gold answer:"])?;
            let resp = field(tail, &["Generated answer:"])?;
            let label = if contains_normalized(&resp, &gold) { "CORRECT" } else { "WRONG" };
            return Some(format!("{{\"label\": \"{label}\"}}"));
        }
        None
    }
}

/// Echoes the first raw-turn evidence block; falls back to the first block of
/// any kind, then to an explicit no-memory statement.
fn mock_answer(prompt: &str) -> String {
    let evidence = prompt.split("EVIDENCE:").nth(1).unwrap_or("");
    let blocks: Vec<&str> = evidence
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .collect();
    let pick = blocks
        .iter()
        .find(|l| l.contains("[turn |"))
        .or_else(|| blocks.first());
    match pick {
        Some(block) => match block.split_once("] ") {
            Some((_, text)) => text.to_string(),
            None => block.to_string(),
        },
        None => "I have no memory relevant to this question; it was never mentioned.".to_string(),
    }
}

/// Extracts the text between the first of `labels` and the next labeled line
/// or blank line.
fn field(prompt: &str, labels: &[&str]) -> Option<String> {
    for label in labels {
        if let Some(idx) = prompt.find(label) {
            let rest = &prompt[idx + label.len()..];
            let end = rest.find("\n\n").unwrap_or(rest.len());
            let chunk = &rest[..end];
            // Stop at the next "Something:" field line if present.
            let mut lines = Vec::new();
            for (i, line) in chunk.lines().enumerate() {
                if i > 0 && line.contains(": ") && line.split(':').next().is_some_and(|h| h.len() < 40) {
                    break;
                }
                lines.push(line.trim());
            }
            return Some(lines.join(" ").trim().to_string());
        }
    }
    None
}

fn contains_normalized(haystack: &str, needle: &str) -> bool {
    let h = normalize_text(haystack);
    let n = normalize_text(needle);
    !n.is_empty() && h.contains(&n)
}

impl CompletionProvider for MockCompletionProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<String> {
        if req.temperature < 0.0 {
            return Err(MemoryError::InvalidArgument("temperature must be >= 0".into()));
        }
        if req.max_tokens == 0 {
            return Err(MemoryError::InvalidArgument("max_tokens must be > 0".into()));
        }
        if let Some(resp) = self.exact.lock().unwrap().get(&sha_hex(&req.prompt)) {
            return Ok(resp.clone());
        }
        for (key, resp) in self.rules.lock().unwrap().iter() {
            if req.prompt.contains(key) {
                return Ok(resp.clone());
            }
        }
        if let Some(resp) = self.builtin(&req.prompt) {
            return Ok(resp);
        }
        Ok(format!("[mock:{}]", &sha_hex(&req.prompt)[..12]))
    }
}

/// Seeded pseudo-random unit vectors keyed by normalized text, with optional
/// per-text fixture overrides so tests can pin exact similarity geometry.
pub struct MockEmbeddingProvider {
    dim: usize,
    overrides: Mutex<BTreeMap<String, Vec<f32>>>,
}

impl MockEmbeddingProvider {
    pub fn new(dim: usize) -> Self {
        MockEmbeddingProvider { dim, overrides: Mutex::new(BTreeMap::new()) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Pins the vector returned for `text` (normalized to unit length).
    pub fn with_override(self, text: &str, vector: Vec<f32>) -> Self {
        self.set_override(text, vector);
        self
    }

    pub fn set_override(&self, text: &str, mut vector: Vec<f32>) {
        assert_eq!(vector.len(), self.dim, "override dimension mismatch");
        l2_normalize(&mut vector);
        self.overrides.lock().unwrap().insert(normalize_name(text), vector);
    }

    fn hash_vector(&self, text: &str) -> Vec<f32> {
        let digest = Sha256::digest(format!("chronomem-embed:{}", normalize_name(text)).as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha20Rng::from_seed(seed);
        let mut v: Vec<f32> = (0..self.dim).map(|_| rng.gen_range(-1.0f32..1.0f32)).collect();
        l2_normalize(&mut v);
        v
    }
}

impl EmbeddingProvider for MockEmbeddingProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        if texts.is_empty() {
            return Err(MemoryError::InvalidArgument("embed requires at least one text".into()));
        }
        let overrides = self.overrides.lock().unwrap();
        Ok(texts
            .iter()
            .map(|t| {
                overrides
                    .get(&normalize_name(t))
                    .cloned()
                    .unwrap_or_else(|| self.hash_vector(t))
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cosine;

    #[test]
    fn mock_completion_is_a_lookup_table() {
        let mock = MockCompletionProvider::new().with_response("P", "fixture says hi");
        let out = mock.complete(&CompletionRequest::new("P")).unwrap();
        assert_eq!(out, "fixture says hi");
    }

    #[test]
    fn unknown_prompt_gets_echo_digest() {
        let mock = MockCompletionProvider::new();
        let a = mock.complete(&CompletionRequest::new("something else")).unwrap();
        let b = mock.complete(&CompletionRequest::new("something else")).unwrap();
        assert!(a.starts_with("[mock:"));
        assert_eq!(a, b);
    }

    #[test]
    fn embed_is_deterministic_and_unit_norm() {
        let mock = MockEmbeddingProvider::new(32);
        let out = mock.embed(&["a".into(), "a".into(), "b".into()]).unwrap();
        assert_eq!(out[0], out[1]);
        assert_ne!(out[0], out[2]);
        for v in &out {
            let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn embed_override_controls_geometry() {
        let mock = MockEmbeddingProvider::new(4)
            .with_override("tokyo trip", vec![1.0, 0.0, 0.0, 0.0])
            .with_override("kyoto trip", vec![0.95, f32::sqrt(1.0 - 0.9025), 0.0, 0.0]);
        let out = mock.embed(&["Tokyo  Trip".into(), "kyoto trip".into()]).unwrap();
        assert!((cosine(&out[0], &out[1]) - 0.95).abs() < 1e-5);
    }

    #[test]
    fn judge_containment() {
        let mock = MockCompletionProvider::new();
        let prompt = crate::provider::prompts::fill(
            crate::provider::prompts::JUDGE_STANDARD,
            &[("question", "q"), ("answer", "Berlin"), ("response", "I believe you live in Berlin now.")],
        );
        assert_eq!(mock.complete(&CompletionRequest::new(prompt)).unwrap(), "yes");
        let prompt = crate::provider::prompts::fill(
            crate::provider::prompts::JUDGE_STANDARD,
            &[("question", "q"), ("answer", "Berlin"), ("response", "Paris, probably.")],
        );
        assert_eq!(mock.complete(&CompletionRequest::new(prompt)).unwrap(), "no");
    }

    #[test]
    fn answer_handler_prefers_first_raw_turn() {
        let prompt = "TASK: ANSWER-V1\nQuestion (asked 2023-05-30): q\n\nEVIDENCE:\n1. [topic | 2023-05-01..2023-06-01] a month of cocktails\n2. [turn | 2023-05-27] user: I made a Negroni Sbagliato.\n";
        let mock = MockCompletionProvider::new();
        let out = mock.complete(&CompletionRequest::new(prompt)).unwrap();
        assert_eq!(out, "user: I made a Negroni Sbagliato.");
    }
}
