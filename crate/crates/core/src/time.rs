//! Points and half-open ranges on the semantic timeline.
//!
//! Day resolution is canonical: a [`TimePoint`] may carry a time-of-day for
//! display, but every range membership test truncates to the calendar day.

use chrono::{Datelike, Duration, Months, NaiveDate, NaiveTime, Weekday};
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

use crate::error::{MemoryError, Result};

/// A UTC point in time at day resolution, with optional seconds-within-day.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimePoint {
    date: NaiveDate,
    time_of_day: Option<u32>,
}

impl TimePoint {
    pub fn new(date: NaiveDate) -> Self {
        TimePoint { date, time_of_day: None }
    }

    pub fn with_time(date: NaiveDate, seconds: u32) -> Self {
        TimePoint { date, time_of_day: Some(seconds.min(86_399)) }
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Result<Self> {
        NaiveDate::from_ymd_opt(year, month, day)
            .map(TimePoint::new)
            .ok_or_else(|| MemoryError::InvalidArgument(format!("invalid date {year}-{month}-{day}")))
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn time_of_day(&self) -> Option<u32> {
        self.time_of_day
    }

    /// Drops the time-of-day component.
    pub fn day(&self) -> TimePoint {
        TimePoint::new(self.date)
    }

    pub fn add_days(&self, n: i64) -> TimePoint {
        TimePoint { date: self.date + Duration::days(n), time_of_day: self.time_of_day }
    }

    /// Parses `YYYY-MM-DD` or a full ISO-8601 timestamp (`Z` / offset suffix allowed).
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Ok(TimePoint::new(d));
        }
        // Full timestamps: tolerate trailing Z or offset by trying chrono's formats.
        if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
            let dt = dt.naive_utc();
            return Ok(TimePoint::with_time(dt.date(), dt.time().signed_duration_since(NaiveTime::MIN).num_seconds() as u32));
        }
        for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
            if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(TimePoint::with_time(
                    dt.date(),
                    dt.time().signed_duration_since(NaiveTime::MIN).num_seconds() as u32,
                ));
            }
        }
        Err(MemoryError::InvalidArgument(format!("unparseable timestamp: {s:?}")))
    }

    pub fn to_iso(&self) -> String {
        match self.time_of_day {
            None => self.date.format("%Y-%m-%d").to_string(),
            Some(secs) => {
                let (h, rem) = (secs / 3600, secs % 3600);
                format!("{}T{:02}:{:02}:{:02}", self.date.format("%Y-%m-%d"), h, rem / 60, rem % 60)
            }
        }
    }

    /// Monday of the ISO week containing this point.
    pub fn week_start(&self) -> NaiveDate {
        let back = self.date.weekday().num_days_from_monday() as i64;
        self.date - Duration::days(back)
    }

    pub fn month_start(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.date.year(), self.date.month(), 1).unwrap()
    }

    pub fn year_start(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.date.year(), 1, 1).unwrap()
    }
}

impl fmt::Debug for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_iso())
    }
}

impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_iso())
    }
}

impl Serialize for TimePoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_iso())
    }
}

impl<'de> Deserialize<'de> for TimePoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        TimePoint::parse(&s).map_err(D::Error::custom)
    }
}

/// Half-open interval `[start, end)` at day resolution, or the unconstrained
/// range that contains every point.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum TimeRange {
    Unconstrained,
    Bounded { start: TimePoint, end: TimePoint },
}

impl TimeRange {
    pub fn bounded(start: TimePoint, end: TimePoint) -> Result<Self> {
        if start.date() >= end.date() {
            return Err(MemoryError::InvalidArgument(format!(
                "range start {start} must precede end {end}"
            )));
        }
        Ok(TimeRange::Bounded { start: start.day(), end: end.day() })
    }

    /// The single-day range `[day, day+1)`.
    pub fn single_day(day: TimePoint) -> Self {
        TimeRange::Bounded { start: day.day(), end: day.day().add_days(1) }
    }

    pub fn from_dates(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        TimeRange::bounded(TimePoint::new(start), TimePoint::new(end))
    }

    pub fn is_unconstrained(&self) -> bool {
        matches!(self, TimeRange::Unconstrained)
    }

    pub fn start(&self) -> Option<TimePoint> {
        match self {
            TimeRange::Unconstrained => None,
            TimeRange::Bounded { start, .. } => Some(*start),
        }
    }

    pub fn end(&self) -> Option<TimePoint> {
        match self {
            TimeRange::Unconstrained => None,
            TimeRange::Bounded { end, .. } => Some(*end),
        }
    }

    /// `true` iff the range is unconstrained or `start <= t < end` at day resolution.
    pub fn contains(&self, t: TimePoint) -> bool {
        match self {
            TimeRange::Unconstrained => true,
            TimeRange::Bounded { start, end } => start.date() <= t.date() && t.date() < end.date(),
        }
    }

    /// `true` iff either range is unconstrained or `max(start) < min(end)`.
    pub fn overlaps(&self, other: &TimeRange) -> bool {
        match (self, other) {
            (TimeRange::Unconstrained, _) | (_, TimeRange::Unconstrained) => true,
            (
                TimeRange::Bounded { start: a0, end: a1 },
                TimeRange::Bounded { start: b0, end: b1 },
            ) => a0.date().max(b0.date()) < a1.date().min(b1.date()),
        }
    }
}

impl fmt::Display for TimeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeRange::Unconstrained => write!(f, "unconstrained"),
            TimeRange::Bounded { start, end } => write!(f, "[{start}, {end})"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RangeRepr {
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<TimePoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    end: Option<TimePoint>,
    unconstrained: bool,
}

impl Serialize for TimeRange {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            TimeRange::Unconstrained => RangeRepr { start: None, end: None, unconstrained: true },
            TimeRange::Bounded { start, end } => {
                RangeRepr { start: Some(*start), end: Some(*end), unconstrained: false }
            }
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TimeRange {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = RangeRepr::deserialize(deserializer)?;
        if repr.unconstrained {
            return Ok(TimeRange::Unconstrained);
        }
        match (repr.start, repr.end) {
            (Some(s), Some(e)) => TimeRange::bounded(s, e).map_err(D::Error::custom),
            _ => Err(D::Error::custom("bounded range requires start and end")),
        }
    }
}

/// Convenience used by rule resolution: first day of the month `n` months away.
pub fn shift_month_start(date: NaiveDate, n: i32) -> NaiveDate {
    let first = NaiveDate::from_ymd_opt(date.year(), date.month(), 1).unwrap();
    if n >= 0 {
        first + Months::new(n as u32)
    } else {
        first - Months::new((-n) as u32)
    }
}

pub fn weekday_is_monday(date: NaiveDate) -> bool {
    date.weekday() == Weekday::Mon
}
