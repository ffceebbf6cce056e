//! Nearest-memento resolution and temporal-violation classification.
//!
//! Replay is modeled as pure nearest-instant lookup over a supplied
//! capture set: the capture minimizing `|capture - base|` wins, past or
//! future. At an exact midpoint the earlier (past) capture wins.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::cdx::CaptureSet;
use crate::memento::MementoRecord;
use crate::timestamp;

/// A violation threshold in whole seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Threshold(u64);

impl Threshold {
    pub const fn from_secs(secs: u64) -> Self {
        Threshold(secs)
    }

    pub const fn hours(h: u64) -> Self {
        Threshold(h * 3600)
    }

    pub fn secs(self) -> u64 {
        self.0
    }

    /// Default: more than two days is a violation.
    pub const DEFAULT: Threshold = Threshold::hours(48);

    /// The 1, 2, 6, 24 and 48 hour presets.
    pub fn presets() -> Vec<Threshold> {
        [1, 2, 6, 24, 48].into_iter().map(Threshold::hours).collect()
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0;
        if s > 0 && s.is_multiple_of(3600) {
            write!(f, "{}h", s / 3600)
        } else if s > 0 && s.is_multiple_of(60) {
            write!(f, "{}m", s / 60)
        } else {
            write!(f, "{s}s")
        }
    }
}

impl FromStr for Threshold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let d = humantime::parse_duration(s.trim()).map_err(|e| format!("bad duration `{s}`: {e}"))?;
        if d.subsec_nanos() != 0 {
            return Err(format!("duration `{s}` is not a whole number of seconds"));
        }
        Ok(Threshold(d.as_secs()))
    }
}

impl From<Threshold> for String {
    fn from(t: Threshold) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for Threshold {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Exact,
    WithinThreshold,
    Violation,
    Unresolvable,
}

impl Classification {
    /// Whether replay would show no content (or wrong-era content) when
    /// resources beyond the threshold are refused.
    pub fn is_affected(self) -> bool {
        matches!(self, Classification::Violation | Classification::Unresolvable)
    }

    pub fn of_spread(spread_seconds: Option<i64>, threshold: Threshold) -> Classification {
        match spread_seconds {
            None => Classification::Unresolvable,
            Some(0) => Classification::Exact,
            Some(s) if s.unsigned_abs() > threshold.secs() => Classification::Violation,
            Some(_) => Classification::WithinThreshold,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Exact => "exact",
            Classification::WithinThreshold => "within_threshold",
            Classification::Violation => "violation",
            Classification::Unresolvable => "unresolvable",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionResult {
    #[serde(with = "timestamp::stamp_serde")]
    pub base_datetime: DateTime<Utc>,
    /// URI-M of the base page, when known.
    pub base_access_url: Option<String>,
    pub resource_url: String,
    pub resolved: Option<MementoRecord>,
    /// Resolved minus base; positive means the resource is from the future.
    pub spread_seconds: Option<i64>,
    pub classification: Classification,
    pub threshold: Threshold,
}

/// Index of the capture nearest to `base` in an ascending slice. Among
/// equally distant captures the earlier one wins; among captures sharing
/// an instant the first in slice order wins.
pub fn nearest_index(sorted: &[DateTime<Utc>], base: DateTime<Utc>) -> Option<usize> {
    if sorted.is_empty() {
        return None;
    }
    let at_or_after = sorted.partition_point(|t| *t < base);
    let future = (at_or_after < sorted.len()).then_some(at_or_after);
    let past = (at_or_after > 0).then(|| {
        let instant = sorted[at_or_after - 1];
        sorted.partition_point(|t| *t < instant)
    });
    match (past, future) {
        (None, Some(f)) => Some(f),
        (Some(p), None) => Some(p),
        (Some(p), Some(f)) => {
            let to_past = base - sorted[p];
            let to_future = sorted[f] - base;
            // Exact hits have `to_future == 0` and win outright.
            if to_future < to_past {
                Some(f)
            } else {
                Some(p)
            }
        }
        (None, None) => None,
    }
}

/// The capture a nearest-instant replay would serve for `base`.
pub fn resolve_nearest(base: DateTime<Utc>, captures: &CaptureSet) -> Option<MementoRecord> {
    let stamps: Vec<DateTime<Utc>> = captures.timestamps().collect();
    nearest_index(&stamps, base).map(|i| captures.memento(&captures.records[i]))
}

/// Precomputed lookup for resolving many base instants against one set.
pub struct Resolver<'a> {
    captures: &'a CaptureSet,
    stamps: Vec<DateTime<Utc>>,
}

impl<'a> Resolver<'a> {
    pub fn new(captures: &'a CaptureSet) -> Self {
        Resolver {
            captures,
            stamps: captures.timestamps().collect(),
        }
    }

    /// Signed spread in seconds to the nearest capture.
    pub fn spread(&self, base: DateTime<Utc>) -> Option<i64> {
        nearest_index(&self.stamps, base).map(|i| (self.stamps[i] - base).num_seconds())
    }

    pub fn classify(&self, base: DateTime<Utc>, threshold: Threshold) -> ResolutionResult {
        let idx = nearest_index(&self.stamps, base);
        let resolved = idx.map(|i| self.captures.memento(&self.captures.records[i]));
        let spread_seconds = idx.map(|i| (self.stamps[i] - base).num_seconds());
        ResolutionResult {
            base_datetime: base,
            base_access_url: None,
            resource_url: self.captures.original_url.clone(),
            resolved,
            spread_seconds,
            classification: Classification::of_spread(spread_seconds, threshold),
            threshold,
        }
    }
}

/// Resolves `base` and classifies the spread against `threshold`.
/// A spread exactly equal to the threshold is still within it.
pub fn classify(base: DateTime<Utc>, captures: &CaptureSet, threshold: Threshold) -> ResolutionResult {
    Resolver::new(captures).classify(base, threshold)
}
