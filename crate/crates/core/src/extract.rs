//! Turns user messages into candidate entities and temporally grounded
//! candidate facts via the completion provider's structured output.

use serde::{Deserialize, Serialize};

use crate::error::{MemoryError, Result};
use crate::model::{ChatTurn, Speaker, TurnId};
use crate::parser;
use crate::provider::{prompts, CompletionProvider, CompletionRequest};
use crate::time::TimePoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntity {
    pub name: String,
    pub summary_fragment: String,
    pub source_turn_id: TurnId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateFact {
    pub subject_name: String,
    pub object_name: String,
    pub relation: String,
    pub semantic_time: Option<TimePoint>,
    pub source_turn_id: TurnId,
}

/// Fallback semantic time for facts that carry no temporal expression:
/// the turn's dialogue time, truncated to the day.
///
/// Panics if the fact already carries a semantic time; that is a contract
/// violation in the caller.
pub fn default_semantic_time(fact: &CandidateFact, turn: &ChatTurn) -> TimePoint {
    assert!(
        fact.semantic_time.is_none(),
        "default_semantic_time requires a timeless fact"
    );
    turn.dialogue_time.day()
}

/// Extracts entities and facts from one user turn given its context window.
/// Only user turns are extracted; assistant turns may appear in `context`.
/// Provider output that fails to parse gets one corrective re-prompt, then
/// surfaces as [`MemoryError::ExtractionFormat`].
pub fn extract_turn(
    turn: &ChatTurn,
    context: &[ChatTurn],
    provider: &dyn CompletionProvider,
) -> Result<(Vec<CandidateEntity>, Vec<CandidateFact>)> {
    if turn.speaker != Speaker::User {
        return Ok((Vec::new(), Vec::new()));
    }
    let prompt = build_prompt(turn, context);
    let raw = provider.complete(&CompletionRequest::new(prompt.clone()))?;
    match parse_output(&raw, turn) {
        Ok(parsed) => Ok(parsed),
        Err(first_err) => {
            let corrective = format!(
                "{prompt}\n\nYour previous output did not follow the format. \
                 Output ONLY lines of the form ENTITY|name|summary or \
                 FACT|subject|relation|object|time, or the single word NONE.\n\
                 Previous output:\n{raw}"
            );
            let retry = provider.complete(&CompletionRequest::new(corrective))?;
            parse_output(&retry, turn).map_err(|_| first_err)
        }
    }
}

fn build_prompt(turn: &ChatTurn, context: &[ChatTurn]) -> String {
    let context_text = if context.is_empty() {
        "(none)".to_string()
    } else {
        context
            .iter()
            .map(|t| {
                let who = match t.speaker {
                    Speaker::User => "user",
                    Speaker::Assistant => "assistant",
                };
                format!("[{}] {}: {}", t.dialogue_time, who, t.text)
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    prompts::fill(
        prompts::EXTRACTION,
        &[
            ("context", &context_text),
            ("date", &turn.dialogue_time.to_iso()),
            ("message", &turn.text),
        ],
    )
}

fn parse_output(
    raw: &str,
    turn: &ChatTurn,
) -> Result<(Vec<CandidateEntity>, Vec<CandidateFact>)> {
    let mut entities = Vec::new();
    let mut facts = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() || line.eq_ignore_ascii_case("none") {
            continue;
        }
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        match fields.first().map(|s| s.to_ascii_uppercase()).as_deref() {
            Some("ENTITY") if fields.len() >= 3 => {
                if fields[1].is_empty() {
                    return Err(format_err("empty entity name", raw));
                }
                entities.push(CandidateEntity {
                    name: fields[1].to_string(),
                    summary_fragment: fields[2].to_string(),
                    source_turn_id: turn.turn_id.clone(),
                });
            }
            Some("FACT") if fields.len() >= 5 => {
                if fields[1].is_empty() || fields[2].is_empty() || fields[3].is_empty() {
                    return Err(format_err("empty fact field", raw));
                }
                let semantic_time = resolve_fact_time(fields[4], turn.dialogue_time);
                facts.push(CandidateFact {
                    subject_name: fields[1].to_string(),
                    relation: fields[2].to_string(),
                    object_name: fields[3].to_string(),
                    semantic_time,
                    source_turn_id: turn.turn_id.clone(),
                });
            }
            _ => return Err(format_err(&format!("unrecognized line {line:?}"), raw)),
        }
    }
    Ok((entities, facts))
}

/// Temporal expressions on facts resolve via the temporal parser anchored at
/// the turn's dialogue time; the range start is the fact's semantic time.
fn resolve_fact_time(expr: &str, anchor: TimePoint) -> Option<TimePoint> {
    if expr == "-" || expr.is_empty() {
        return None;
    }
    let range = parser::parse_time(expr, anchor);
    range.start()
}

fn format_err(reason: &str, raw: &str) -> MemoryError {
    MemoryError::ExtractionFormat { reason: reason.to_string(), raw: raw.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::mock::MockCompletionProvider;

    fn turn(text: &str, when: &str) -> ChatTurn {
        ChatTurn {
            turn_id: "t1".into(),
            session_id: "s1".into(),
            dialogue_time: TimePoint::parse(when).unwrap(),
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    #[test]
    fn tokyo_case() {
        let mock = MockCompletionProvider::new().with_rule(
            "I visited Tokyo on May 23",
            "ENTITY|Tokyo|a city the user visited\nFACT|user|visited|Tokyo|on May 23",
        );
        let t = turn("I visited Tokyo on May 23", "2023-05-28");
        let (ents, facts) = extract_turn(&t, &[], &mock).unwrap();
        assert_eq!(ents.len(), 1);
        assert_eq!(ents[0].name, "Tokyo");
        assert_eq!(facts.len(), 1);
        assert_eq!(facts[0].relation, "visited");
        assert_eq!(facts[0].semantic_time.unwrap().to_iso(), "2023-05-23");
        assert_eq!(facts[0].source_turn_id, "t1");
    }

    #[test]
    fn empty_message_yields_nothing() {
        let mock = MockCompletionProvider::new(); // extraction fallback: NONE
        let t = turn("hello!", "2023-05-28");
        let (ents, facts) = extract_turn(&t, &[], &mock).unwrap();
        assert!(ents.is_empty() && facts.is_empty());
    }

    #[test]
    fn relative_expression_anchored_at_dialogue_time() {
        let mock = MockCompletionProvider::new().with_rule(
            "the trip starts tomorrow",
            "FACT|user|starts_trip|the trip|tomorrow",
        );
        let t = turn("the trip starts tomorrow", "2023-05-28");
        let (_, facts) = extract_turn(&t, &[], &mock).unwrap();
        assert_eq!(facts[0].semantic_time.unwrap().to_iso(), "2023-05-29");
    }

    #[test]
    fn assistant_turns_are_not_extracted() {
        let mock = MockCompletionProvider::new();
        let mut t = turn("I visited Tokyo", "2023-05-28");
        t.speaker = Speaker::Assistant;
        let (ents, facts) = extract_turn(&t, &[], &mock).unwrap();
        assert!(ents.is_empty() && facts.is_empty());
    }

    #[test]
    fn malformed_output_errors_after_reprompt() {
        let mock = MockCompletionProvider::new().with_rule("weird message", "GARBAGE OUT");
        let t = turn("weird message", "2023-05-28");
        let err = extract_turn(&t, &[], &mock).unwrap_err();
        assert!(matches!(err, MemoryError::ExtractionFormat { .. }));
        assert!(err.to_string().contains("GARBAGE OUT"));
    }

    #[test]
    fn default_time_truncates_to_day() {
        let t = ChatTurn {
            turn_id: "t".into(),
            session_id: "s".into(),
            dialogue_time: TimePoint::parse("2024-01-01T09:00:00").unwrap(),
            speaker: Speaker::User,
            text: "x".into(),
        };
        let f = CandidateFact {
            subject_name: "user".into(),
            object_name: "x".into(),
            relation: "likes".into(),
            semantic_time: None,
            source_turn_id: "t".into(),
        };
        assert_eq!(default_semantic_time(&f, &t).to_iso(), "2024-01-01");
    }

    #[test]
    #[should_panic]
    fn default_time_rejects_timed_facts() {
        let t = turn("x", "2023-05-28");
        let f = CandidateFact {
            subject_name: "user".into(),
            object_name: "x".into(),
            relation: "likes".into(),
            semantic_time: Some(TimePoint::parse("2023-05-01").unwrap()),
            source_turn_id: "t".into(),
        };
        let _ = default_semantic_time(&f, &t);
    }
}
