//! Offline evaluation harness: replays scripted conversations through a
//! fresh engine per case, asks the question, and scores the generated answer
//! with a category-specific judge prompt at temperature zero.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::config::EngineConfig;
use crate::engine::Engine;
use crate::error::Result;
use crate::model::{ChatTurn, Query, Speaker};
use crate::provider::mock::{MockCompletionProvider, MockEmbeddingProvider};
use crate::provider::{prompts, CompletionRequest};
use crate::retrieve::AblationFlags;
use crate::time::TimePoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    SingleSessionUser,
    SingleSessionAssistant,
    SingleSessionPreference,
    MultiSession,
    TemporalReasoning,
    KnowledgeUpdate,
    Abstention,
    LocomoSingleHop,
    LocomoMultiHop,
    LocomoTemporal,
}

impl Category {
    pub fn all() -> [Category; 10] {
        [
            Category::SingleSessionUser,
            Category::SingleSessionAssistant,
            Category::SingleSessionPreference,
            Category::MultiSession,
            Category::TemporalReasoning,
            Category::KnowledgeUpdate,
            Category::Abstention,
            Category::LocomoSingleHop,
            Category::LocomoMultiHop,
            Category::LocomoTemporal,
        ]
    }

    pub fn name(&self) -> String {
        serde_json::to_string(self).unwrap().trim_matches('"').to_string()
    }

    fn is_locomo(&self) -> bool {
        matches!(
            self,
            Category::LocomoSingleHop | Category::LocomoMultiHop | Category::LocomoTemporal
        )
    }
}

/// Deterministic per-case provider fixtures.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseFixtures {
    /// Substring-keyed completion rules (extraction outputs, canned answers).
    pub completion_rules: Vec<(String, String)>,
    /// Pinned embedding vectors keyed by text.
    pub embedding_overrides: Vec<(String, Vec<f32>)>,
    /// The turn the retriever should rank first, when the case defines one.
    pub target_turn_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub case_id: String,
    pub category: Category,
    pub turns: Vec<ChatTurn>,
    pub question: String,
    pub question_time: TimePoint,
    pub gold: String,
    #[serde(default)]
    pub fixtures: CaseFixtures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub case_id: String,
    pub category: Category,
    pub answer: Option<String>,
    pub correct: Option<bool>,
    /// First raw turn in the final ranking.
    pub top1_turn: Option<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub total: usize,
    pub correct: usize,
}

impl CategoryScore {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub judged: usize,
    pub errored: usize,
    pub correct: usize,
    pub overall_accuracy: f64,
    pub per_category: BTreeMap<String, CategoryScore>,
    pub records: Vec<EvalRecord>,
}

pub fn judge_template(category: Category) -> &'static str {
    match category {
        Category::TemporalReasoning => prompts::JUDGE_TEMPORAL,
        Category::KnowledgeUpdate => prompts::JUDGE_KNOWLEDGE_UPDATE,
        Category::SingleSessionPreference => prompts::JUDGE_PREFERENCE,
        Category::Abstention => prompts::JUDGE_ABSTENTION,
        c if c.is_locomo() => prompts::JUDGE_LOCOMO,
        _ => prompts::JUDGE_STANDARD,
    }
}

fn judge_verdict(category: Category, raw: &str) -> bool {
    if category.is_locomo() {
        // The label arrives as JSON; tolerate a bare label too.
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(raw.trim()) {
            if let Some(label) = v.get("label").and_then(|l| l.as_str()) {
                return label.eq_ignore_ascii_case("correct");
            }
        }
        return raw.to_uppercase().contains("CORRECT") && !raw.to_uppercase().contains("WRONG");
    }
    raw.trim().to_lowercase().starts_with("yes")
}

fn judge(
    category: Category,
    question: &str,
    gold: &str,
    response: &str,
    completion: &dyn crate::provider::CompletionProvider,
) -> Result<bool> {
    let template = judge_template(category);
    let prompt = if category.is_locomo() {
        prompts::fill(
            template,
            &[("question", question), ("gold_answer", gold), ("generated_answer", response)],
        )
    } else {
        prompts::fill(template, &[("question", question), ("answer", gold), ("response", response)])
    };
    let mut req = CompletionRequest::new(prompt);
    req.temperature = 0.0;
    let raw = completion.complete(&req)?;
    Ok(judge_verdict(category, &raw))
}

/// Runs every case through a fresh engine and aggregates judged accuracy.
/// Cases whose pipeline errors count as errored, not as incorrect.
pub fn run_eval(
    cases: &[EvalCase],
    config: &EngineConfig,
    ablation: AblationFlags,
) -> Result<EvalReport> {
    let mut records = Vec::new();
    for case in cases {
        records.push(run_case(case, config, ablation));
    }

    let mut per_category: BTreeMap<String, CategoryScore> = BTreeMap::new();
    let mut judged = 0;
    let mut correct = 0;
    let mut errored = 0;
    for r in &records {
        match r.correct {
            Some(ok) => {
                judged += 1;
                let entry = per_category.entry(r.category.name()).or_default();
                entry.total += 1;
                if ok {
                    correct += 1;
                    entry.correct += 1;
                }
            }
            None => errored += 1,
        }
    }
    Ok(EvalReport {
        total: records.len(),
        judged,
        errored,
        correct,
        overall_accuracy: if judged == 0 { 0.0 } else { correct as f64 / judged as f64 },
        per_category,
        records,
    })
}

fn run_case(case: &EvalCase, config: &EngineConfig, ablation: AblationFlags) -> EvalRecord {
    let mut record = EvalRecord {
        case_id: case.case_id.clone(),
        category: case.category,
        answer: None,
        correct: None,
        top1_turn: None,
        error: None,
    };
    let completion = MockCompletionProvider::new();
    for (key, response) in &case.fixtures.completion_rules {
        completion.add_rule(key, response);
    }
    let embedding = MockEmbeddingProvider::new(config.provider.embedding_dim);
    for (text, vector) in &case.fixtures.embedding_overrides {
        embedding.set_override(text, vector.clone());
    }
    let completion = Arc::new(completion);
    let mut engine =
        Engine::with_providers(config.clone(), completion.clone(), Arc::new(embedding));

    let outcome = (|| -> Result<(Option<String>, Option<String>)> {
        engine.ingest_turns(case.turns.clone())?;
        engine.consolidate(case.question_time, true)?;
        let result = engine.query(
            &Query { text: case.question.clone(), issued_at: case.question_time },
            Some(ablation),
        )?;
        let top1 = result
            .ranked
            .iter()
            .find(|c| c.target.is_raw())
            .map(|c| c.target.id().to_string());
        Ok((result.answer, top1))
    })();

    match outcome {
        Err(e) => record.error = Some(e.to_string()),
        Ok((answer, top1)) => {
            record.top1_turn = top1;
            match &answer {
                None => record.error = Some("no answer generated".into()),
                Some(text) => {
                    match judge(case.category, &case.question, &case.gold, text, completion.as_ref())
                    {
                        Ok(ok) => record.correct = Some(ok),
                        Err(e) => record.error = Some(format!("judge failed: {e}")),
                    }
                }
            }
            record.answer = answer;
        }
    }
    record
}

fn user_turn(id: &str, session: &str, when: &str, text: &str) -> ChatTurn {
    ChatTurn {
        turn_id: id.into(),
        session_id: session.into(),
        dialogue_time: TimePoint::parse(when).unwrap(),
        speaker: Speaker::User,
        text: text.into(),
    }
}

/// Keys a completion rule to the extraction prompt for one specific message,
/// so the same text appearing in context windows, answer evidence, or judge
/// prompts cannot trigger it.
fn extraction_key(date: &str, text: &str) -> String {
    format!("Message (sent {date}):\n{text}")
}

fn month_name(m: u32) -> &'static str {
    [
        "January", "February", "March", "April", "May", "June", "July", "August", "September",
        "October", "November", "December",
    ][(m - 1) as usize]
}

/// Unit vector `cos*e0 + sqrt(1-cos^2)*e1` rotated into axis `alt` for e1.
fn cos_vector(dim: usize, cos: f32, alt: usize) -> Vec<f32> {
    let mut v = vec![0.0f32; dim];
    v[0] = cos;
    v[alt] = (1.0 - cos * cos).sqrt();
    v
}

/// A suite of temporally adversarial cases: the semantically closest turn
/// (cosine 0.95) lies outside the question's time window while the correct
/// turn (cosine 0.80) lies inside it. Pure similarity ranking picks the
/// decoy; temporal reranking must pick the target.
pub fn generate_temporal_suite(dim: usize, size: usize) -> Vec<EvalCase> {
    let mut cases = Vec::with_capacity(size);
    for i in 0..size {
        let month = 1 + (i % 10) as u32; // Jan..Oct, question asked in December
        let decoy_month = month + 1;
        let gold = format!("gold-dish-{i}");
        let target_text = format!("I cooked {gold} for dinner with friends.");
        let decoy_text = format!("I cooked decoy-dish-{i} for a potluck party.");
        let question = format!("What did I cook in {} 2023?", month_name(month));
        let target_id = format!("c{i}-target");
        let fact_date = format!("2023-{month:02}-10");

        let fixtures = CaseFixtures {
            completion_rules: vec![(
                extraction_key(&fact_date, &target_text),
                format!("ENTITY|{gold}|a dish the user cooked\nFACT|user|cooked|{gold}|{fact_date}"),
            )],
            embedding_overrides: vec![
                (question.clone(), cos_vector(dim, 1.0, 1)),
                (target_text.clone(), cos_vector(dim, 0.80, 1)),
                (decoy_text.clone(), cos_vector(dim, 0.95, 1)),
            ],
            target_turn_id: Some(target_id.clone()),
        };
        cases.push(EvalCase {
            case_id: format!("temporal-{i:03}"),
            category: Category::TemporalReasoning,
            turns: vec![
                user_turn(&target_id, &format!("s{i}"), &fact_date, &target_text),
                user_turn(
                    &format!("c{i}-decoy"),
                    &format!("s{i}"),
                    &format!("2023-{decoy_month:02}-10"),
                    &decoy_text,
                ),
            ],
            question,
            question_time: TimePoint::parse("2023-12-20").unwrap(),
            gold,
            fixtures,
        });
    }
    cases
}

/// A small deterministic suite covering every category. `size` repeats the
/// templates with varied identifiers.
pub fn generate_synthetic_suite(dim: usize, size: usize) -> Vec<EvalCase> {
    let mut cases = Vec::with_capacity(size);
    for i in 0..size {
        let case = match i % 10 {
            0 => single_session_user(i),
            1 => single_session_assistant(i),
            2 => preference(i),
            3 => multi_session(dim, i),
            4 => temporal(dim, i),
            5 => knowledge_update(dim, i),
            6 => abstention(i),
            7 => locomo(i, Category::LocomoSingleHop),
            8 => locomo(i, Category::LocomoMultiHop),
            _ => locomo(i, Category::LocomoTemporal),
        };
        cases.push(case);
    }
    cases
}

fn single_session_user(i: usize) -> EvalCase {
    let gold = format!("a blue-{i} bicycle");
    EvalCase {
        case_id: format!("ssu-{i:03}"),
        category: Category::SingleSessionUser,
        turns: vec![user_turn(
            &format!("ssu{i}-t1"),
            "s1",
            "2023-04-12",
            &format!("I finally bought {gold} yesterday."),
        )],
        question: "What did I buy?".into(),
        question_time: TimePoint::parse("2023-04-20").unwrap(),
        gold,
        fixtures: CaseFixtures::default(),
    }
}

fn single_session_assistant(i: usize) -> EvalCase {
    let gold = format!("the 19:{}5 express train", i % 6);
    let mut turn = user_turn(
        &format!("ssa{i}-t1"),
        "s1",
        "2023-04-12",
        &format!("You should take {gold} to the airport."),
    );
    turn.speaker = Speaker::Assistant;
    EvalCase {
        case_id: format!("ssa-{i:03}"),
        category: Category::SingleSessionAssistant,
        turns: vec![turn],
        question: "Which train did you recommend?".into(),
        question_time: TimePoint::parse("2023-04-20").unwrap(),
        gold,
        fixtures: CaseFixtures::default(),
    }
}

fn preference(i: usize) -> EvalCase {
    EvalCase {
        case_id: format!("pref-{i:03}"),
        category: Category::SingleSessionPreference,
        turns: vec![user_turn(
            &format!("pref{i}-t1"),
            "s1",
            "2023-02-03",
            &format!("Remember that I am vegetarian-{i} and I love spicy food."),
        )],
        question: "Suggest a dinner I would enjoy.".into(),
        question_time: TimePoint::parse("2023-02-10").unwrap(),
        gold: format!("vegetarian-{i}"),
        fixtures: CaseFixtures::default(),
    }
}

fn multi_session(dim: usize, i: usize) -> EvalCase {
    let gold = format!("Lake Tahoe cabin {i}");
    let t1_text = "I started planning a group trip.".to_string();
    let t2_text = format!("We settled on the {gold} for the trip.");
    let question = "Where is the group trip happening?".to_string();
    EvalCase {
        case_id: format!("ms-{i:03}"),
        category: Category::MultiSession,
        turns: vec![
            user_turn(&format!("ms{i}-t1"), "s1", "2023-03-01", &t1_text),
            user_turn(&format!("ms{i}-t2"), "s2", "2023-03-15", &t2_text),
        ],
        question: question.clone(),
        question_time: TimePoint::parse("2023-03-20").unwrap(),
        gold,
        fixtures: CaseFixtures {
            completion_rules: Vec::new(),
            embedding_overrides: vec![
                (question, cos_vector(dim, 1.0, 1)),
                (t1_text, cos_vector(dim, 0.3, 1)),
                (t2_text, cos_vector(dim, 0.9, 1)),
            ],
            target_turn_id: Some(format!("ms{i}-t2")),
        },
    }
}

fn temporal(dim: usize, i: usize) -> EvalCase {
    let mut case = generate_temporal_suite(dim, 1).remove(0);
    let tag = format!("syn-temporal-{i:03}");
    case.case_id = tag;
    case
}

fn knowledge_update(dim: usize, i: usize) -> EvalCase {
    let old_city = format!("Paris-{i}");
    let new_city = format!("Berlin-{i}");
    let t1_text = format!("I live in {old_city} these days.");
    let t2_text = format!("Update: I just moved to {new_city}.");
    let question = "Which city do I live in now?".to_string();
    EvalCase {
        case_id: format!("ku-{i:03}"),
        category: Category::KnowledgeUpdate,
        turns: vec![
            user_turn(&format!("ku{i}-t1"), "s1", "2023-01-10", &t1_text),
            user_turn(&format!("ku{i}-t2"), "s2", "2023-06-01", &t2_text),
        ],
        question: question.clone(),
        question_time: TimePoint::parse("2023-07-01").unwrap(),
        gold: new_city.clone(),
        fixtures: CaseFixtures {
            completion_rules: vec![
                (
                    extraction_key("2023-01-10", &t1_text),
                    format!("ENTITY|{old_city}|a city\nFACT|user|lives_in|{old_city}|-"),
                ),
                (
                    extraction_key("2023-06-01", &t2_text),
                    format!("ENTITY|{new_city}|a city\nFACT|user|lives_in|{new_city}|-"),
                ),
            ],
            // The stale turn is the semantically closer one.
            embedding_overrides: vec![
                (question.clone(), cos_vector(dim, 1.0, 1)),
                (t1_text, cos_vector(dim, 0.9, 1)),
                (t2_text, cos_vector(dim, 0.7, 1)),
            ],
            target_turn_id: Some(format!("ku{i}-t2")),
        },
    }
}

fn abstention(i: usize) -> EvalCase {
    let question = format!("What is the name of my pet iguana number {i}?");
    EvalCase {
        case_id: format!("abst-{i:03}"),
        category: Category::Abstention,
        turns: vec![user_turn(
            &format!("abst{i}-t1"),
            "s1",
            "2023-05-01",
            "I repainted the kitchen over the weekend.",
        )],
        question: question.clone(),
        question_time: TimePoint::parse("2023-05-10").unwrap(),
        gold: "The user never mentioned owning an iguana.".into(),
        fixtures: CaseFixtures {
            // Keyed on the answer-prompt question header so the judge prompt,
            // which formats the question differently, is unaffected.
            completion_rules: vec![(
                format!("Question (asked 2023-05-10): {question}"),
                "I have no memory of that; it was never mentioned.".into(),
            )],
            embedding_overrides: Vec::new(),
            target_turn_id: None,
        },
    }
}

fn locomo(i: usize, category: Category) -> EvalCase {
    let gold = format!("a shell necklace {i}");
    EvalCase {
        case_id: format!("locomo-{i:03}"),
        category,
        turns: vec![user_turn(
            &format!("lc{i}-t1"),
            "s1",
            "2023-08-04",
            &format!("The last time I went to Hawaii I got {gold}."),
        )],
        question: "What did I get the last time I went to Hawaii?".into(),
        question_time: TimePoint::parse("2023-08-20").unwrap(),
        gold,
        fixtures: CaseFixtures::default(),
    }
}
