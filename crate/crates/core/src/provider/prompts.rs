//! Versioned prompt templates shipped with the crate. Leading `#` lines in
//! the template files are provenance comments and are stripped before use.

pub const EXTRACTION: &str = include_str!("../../prompts/extraction.txt");
pub const ENTITY_SUMMARY: &str = include_str!("../../prompts/entity_summary.txt");
pub const TOPIC_SUMMARY: &str = include_str!("../../prompts/topic_summary.txt");
pub const PERSONA_SUMMARY: &str = include_str!("../../prompts/persona_summary.txt");
pub const ANSWER: &str = include_str!("../../prompts/answer.txt");
pub const JUDGE_STANDARD: &str = include_str!("../../prompts/judge_standard.txt");
pub const JUDGE_TEMPORAL: &str = include_str!("../../prompts/judge_temporal.txt");
pub const JUDGE_KNOWLEDGE_UPDATE: &str = include_str!("../../prompts/judge_knowledge_update.txt");
pub const JUDGE_PREFERENCE: &str = include_str!("../../prompts/judge_preference.txt");
pub const JUDGE_ABSTENTION: &str = include_str!("../../prompts/judge_abstention.txt");
pub const JUDGE_LOCOMO: &str = include_str!("../../prompts/judge_locomo.txt");

/// Strips leading comment lines and substitutes `{key}` placeholders.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let body: String = template
        .lines()
        .skip_while(|l| l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    let mut out = body;
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}
