//! Rule-based resolution of semantic-time constraints from query text.
//!
//! A query like "what cocktail did we make last weekend?" is resolved against
//! an anchor point into a half-open [`TimeRange`]. The grammar is a rule table
//! (`rules.tsv`) of regex patterns mapped to resolution kinds; all calendar
//! arithmetic is deterministic and English-only. Queries with no recognizable
//! expression resolve to the unconstrained range.
//!
//! "last weekend" deliberately resolves to the full preceding ISO week
//! (Monday through Sunday), not the literal Saturday/Sunday pair.

use chrono::{Datelike, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::time::{shift_month_start, TimePoint, TimeRange};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExprKind {
    AbsoluteDate,
    MonthYear,
    Year,
    RelativeDay,
    RelativeWeek,
    RelativeWeekend,
    RelativeMonth,
    RelativeYear,
    DurationAgo,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalExpression {
    pub surface: String,
    pub kind: ExprKind,
    pub offset: usize,
}

struct Rule {
    kind: ExprKind,
    regex: Regex,
}

struct RuleTable {
    rules: Vec<Rule>,
}

const RULE_TABLE_SRC: &str = include_str!("rules.tsv");

fn rule_table() -> &'static RuleTable {
    static TABLE: OnceLock<RuleTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rules = Vec::new();
        for line in RULE_TABLE_SRC.lines() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (kind, pattern) = line
                .split_once('\t')
                .expect("rule table line must be kind<TAB>regex");
            let kind = match kind {
                "absolute_date" => ExprKind::AbsoluteDate,
                "month_year" => ExprKind::MonthYear,
                "year" => ExprKind::Year,
                "relative_day" => ExprKind::RelativeDay,
                "relative_week" => ExprKind::RelativeWeek,
                "relative_weekend" => ExprKind::RelativeWeekend,
                "relative_month" => ExprKind::RelativeMonth,
                "relative_year" => ExprKind::RelativeYear,
                "duration_ago" => ExprKind::DurationAgo,
                other => panic!("unknown rule kind {other:?}"),
            };
            let regex = Regex::new(&format!("(?i){pattern}")).expect("rule regex must compile");
            rules.push(Rule { kind, regex });
        }
        RuleTable { rules }
    })
}

/// All non-overlapping temporal expressions in `query_text`, left to right.
/// Overlaps resolve leftmost-longest, then by rule-table order.
pub fn extract_expressions(query_text: &str) -> Vec<TemporalExpression> {
    let table = rule_table();
    let mut matches: Vec<(usize, usize, usize, ExprKind)> = Vec::new();
    for (rule_idx, rule) in table.rules.iter().enumerate() {
        for m in rule.regex.find_iter(query_text) {
            matches.push((m.start(), m.end(), rule_idx, rule.kind));
        }
    }
    matches.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(b.1.cmp(&a.1)) // longer first
            .then(a.2.cmp(&b.2))
    });
    let mut out: Vec<TemporalExpression> = Vec::new();
    let mut covered_until = 0usize;
    for (start, end, _, kind) in matches {
        if start < covered_until {
            continue;
        }
        out.push(TemporalExpression {
            surface: query_text[start..end].to_string(),
            kind,
            offset: start,
        });
        covered_until = end;
    }
    out
}

/// Resolves the semantic-time constraint of a query anchored at `now`.
/// When several expressions match, the leftmost longest wins; unparseable
/// expressions degrade to the unconstrained range.
pub fn parse_time(query_text: &str, now: TimePoint) -> TimeRange {
    for expr in extract_expressions(query_text) {
        match resolve(&expr, now) {
            Some(range) => return range,
            None => {
                log::debug!("temporal expression {:?} did not resolve", expr.surface);
            }
        }
    }
    TimeRange::Unconstrained
}

fn resolve(expr: &TemporalExpression, now: TimePoint) -> Option<TimeRange> {
    let text = expr.surface.to_lowercase();
    let anchor = now.date();
    match expr.kind {
        ExprKind::AbsoluteDate => resolve_absolute(&text, anchor),
        ExprKind::MonthYear => {
            let mut parts = text.split_whitespace();
            let month = month_number(parts.next()?)?;
            let year: i32 = parts.next()?.parse().ok()?;
            month_range(year, month)
        }
        ExprKind::Year => {
            let year: i32 = text
                .split_whitespace()
                .last()?
                .parse()
                .ok()?;
            year_range(year)
        }
        ExprKind::RelativeDay => {
            let day = match text.as_str() {
                "yesterday" => now.add_days(-1),
                "tomorrow" => now.add_days(1),
                _ => now, // today, now, currently, tonight, these days
            };
            Some(TimeRange::single_day(day))
        }
        ExprKind::RelativeWeek => {
            let ws = now.week_start();
            let start = match relative_qualifier(&text) {
                Qual::Last => ws - chrono::Duration::days(7),
                Qual::This => ws,
                Qual::Next => ws + chrono::Duration::days(7),
            };
            TimeRange::from_dates(start, start + chrono::Duration::days(7)).ok()
        }
        ExprKind::RelativeWeekend => {
            // The full ISO week containing that weekend.
            let ws = now.week_start();
            let start = match relative_qualifier(&text) {
                Qual::Last => ws - chrono::Duration::days(7),
                _ => ws,
            };
            TimeRange::from_dates(start, start + chrono::Duration::days(7)).ok()
        }
        ExprKind::RelativeMonth => {
            let n = match relative_qualifier(&text) {
                Qual::Last => -1,
                Qual::This => 0,
                Qual::Next => 1,
            };
            let start = shift_month_start(anchor, n);
            TimeRange::from_dates(start, shift_month_start(start, 1)).ok()
        }
        ExprKind::RelativeYear => {
            let n = match relative_qualifier(&text) {
                Qual::Last => -1,
                Qual::This => 0,
                Qual::Next => 1,
            };
            year_range(anchor.year() + n)
        }
        ExprKind::DurationAgo => {
            let mut parts = text.split_whitespace();
            let n = parse_count(parts.next()?)?;
            let unit = parts.next()?.trim_end_matches('s');
            match unit {
                "day" => Some(TimeRange::single_day(now.add_days(-n))),
                "week" => {
                    let target = TimePoint::new(anchor - chrono::Duration::days(7 * n));
                    let ws = target.week_start();
                    TimeRange::from_dates(ws, ws + chrono::Duration::days(7)).ok()
                }
                "month" => {
                    let start = shift_month_start(anchor, -(n as i32));
                    TimeRange::from_dates(start, shift_month_start(start, 1)).ok()
                }
                "year" => year_range(anchor.year() - n as i32),
                _ => None,
            }
        }
        ExprKind::None => None,
    }
}

enum Qual {
    Last,
    This,
    Next,
}

fn relative_qualifier(text: &str) -> Qual {
    if text.starts_with("last") || text.starts_with("past") {
        Qual::Last
    } else if text.starts_with("next") {
        Qual::Next
    } else {
        Qual::This
    }
}

fn resolve_absolute(text: &str, anchor: NaiveDate) -> Option<TimeRange> {
    if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return TimeRange::from_dates(d, d + chrono::Duration::days(1)).ok();
    }
    // "may 23", "may 23rd, 2022", "23 may 2015", with or without year.
    let cleaned: String = text
        .chars()
        .map(|c| if c == ',' || c == '.' { ' ' } else { c })
        .collect();
    let tokens: Vec<&str> = cleaned.split_whitespace().collect();
    let (month, day_tok, year_tok) = if month_number(tokens.first()?).is_some() {
        (month_number(tokens[0])?, *tokens.get(1)?, tokens.get(2).copied())
    } else {
        (month_number(tokens.get(1)?)?, tokens[0], tokens.get(2).copied())
    };
    let day: u32 = day_tok
        .trim_end_matches(|c: char| c.is_alphabetic())
        .parse()
        .ok()?;
    let year: i32 = match year_tok {
        Some(y) => y.parse().ok()?,
        None => anchor.year(),
    };
    let d = NaiveDate::from_ymd_opt(year, month, day)?;
    TimeRange::from_dates(d, d + chrono::Duration::days(1)).ok()
}

fn month_range(year: i32, month: u32) -> Option<TimeRange> {
    let start = NaiveDate::from_ymd_opt(year, month, 1)?;
    TimeRange::from_dates(start, shift_month_start(start, 1)).ok()
}

fn year_range(year: i32) -> Option<TimeRange> {
    let start = NaiveDate::from_ymd_opt(year, 1, 1)?;
    let end = NaiveDate::from_ymd_opt(year + 1, 1, 1)?;
    TimeRange::from_dates(start, end).ok()
}

fn month_number(token: &str) -> Option<u32> {
    let t = token.trim_end_matches('.');
    let prefix: String = t.chars().take(3).collect();
    match prefix.as_str() {
        "jan" => Some(1),
        "feb" => Some(2),
        "mar" => Some(3),
        "apr" => Some(4),
        "may" => Some(5),
        "jun" => Some(6),
        "jul" => Some(7),
        "aug" => Some(8),
        "sep" => Some(9),
        "oct" => Some(10),
        "nov" => Some(11),
        "dec" => Some(12),
        _ => None,
    }
}

fn parse_count(token: &str) -> Option<i64> {
    match token {
        "a" | "an" | "one" => Some(1),
        "two" => Some(2),
        "three" => Some(3),
        "four" => Some(4),
        "five" => Some(5),
        "six" => Some(6),
        "seven" => Some(7),
        "eight" => Some(8),
        "nine" => Some(9),
        "ten" => Some(10),
        "eleven" => Some(11),
        "twelve" => Some(12),
        _ => token.parse().ok(),
    }
}
