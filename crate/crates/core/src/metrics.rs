//! Aggregate views over resolution results: per-day mean spread series,
//! threshold-impact tables and the Hero-zone violation scan.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cdx::CaptureSet;
use crate::memento::MementoRecord;
use crate::probe::{CsrVerdict, HtmlProbeResult};
use crate::resolve::{Classification, ResolutionResult, Resolver, Threshold};
use crate::timestamp::day_start;

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("date range {0}..{1} is empty")]
    InvalidRange(NaiveDate, NaiveDate),
}

/// Half-open range of UTC days, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, MetricsError> {
        if start >= end {
            return Err(MetricsError::InvalidRange(start, end));
        }
        Ok(DateRange { start, end })
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        t >= day_start(self.start) && t < day_start(self.end)
    }
}

/// Mean signed spread of one UTC day's base captures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySeriesPoint {
    pub day: NaiveDate,
    /// Exact sum of the day's spreads; the mean is derived from it.
    pub spread_sum_seconds: i64,
    pub memento_count: u32,
    pub mean_spread_days: f64,
}

impl DaySeriesPoint {
    fn new(day: NaiveDate, spread_sum_seconds: i64, memento_count: u32) -> Self {
        let mean_spread_days = spread_sum_seconds as f64 / memento_count as f64 / SECONDS_PER_DAY as f64;
        DaySeriesPoint {
            day,
            spread_sum_seconds,
            memento_count,
            mean_spread_days,
        }
    }
}

/// Builds the series from (base instant, spread) observations.
/// Unresolved observations contribute nothing.
pub fn day_series_from_spreads<I>(observations: I) -> Vec<DaySeriesPoint>
where
    I: IntoIterator<Item = (DateTime<Utc>, Option<i64>)>,
{
    let mut days: BTreeMap<NaiveDate, (i64, u32)> = BTreeMap::new();
    for (base, spread) in observations {
        if let Some(s) = spread {
            let slot = days.entry(base.date_naive()).or_insert((0, 0));
            slot.0 += s;
            slot.1 += 1;
        }
    }
    days.into_iter()
        .map(|(day, (sum, n))| DaySeriesPoint::new(day, sum, n))
        .collect()
}

/// Per-day mean spread of every base capture against `resource`.
/// Days without base captures are omitted.
pub fn day_series(base: &CaptureSet, resource: &CaptureSet) -> Vec<DaySeriesPoint> {
    let resolver = Resolver::new(resource);
    day_series_from_spreads(base.timestamps().map(|t| (t, resolver.spread(t))))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdImpactRow {
    pub date_range: DateRange,
    pub total_mementos: usize,
    pub total_days: usize,
    pub threshold: Threshold,
    pub affected_mementos: usize,
    pub affected_days: usize,
}

/// Threshold table from (base instant, spread) observations. Observations
/// outside `range` are ignored; unresolved ones count as affected.
pub fn threshold_impact_from_spreads(
    observations: &[(DateTime<Utc>, Option<i64>)],
    range: DateRange,
    thresholds: &[Threshold],
) -> Vec<ThresholdImpactRow> {
    let in_range: Vec<&(DateTime<Utc>, Option<i64>)> =
        observations.iter().filter(|(t, _)| range.contains(*t)).collect();
    let total_days = in_range
        .iter()
        .map(|(t, _)| t.date_naive())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    thresholds
        .iter()
        .map(|&threshold| {
            let mut affected = 0;
            let mut days = std::collections::BTreeSet::new();
            for (t, spread) in &in_range {
                if Classification::of_spread(*spread, threshold).is_affected() {
                    affected += 1;
                    days.insert(t.date_naive());
                }
            }
            ThresholdImpactRow {
                date_range: range,
                total_mementos: in_range.len(),
                total_days,
                threshold,
                affected_mementos: affected,
                affected_days: days.len(),
            }
        })
        .collect()
}

/// How many base captures in `range` would lose the resource if captures
/// further away than each threshold were refused. Resolution always uses
/// the full resource set, not a range slice, so captures just outside the
/// range still count.
pub fn threshold_impact(
    base: &CaptureSet,
    resource: &CaptureSet,
    range: DateRange,
    thresholds: &[Threshold],
) -> Vec<ThresholdImpactRow> {
    let resolver = Resolver::new(resource);
    let observations: Vec<_> = base
        .timestamps()
        .filter(|t| range.contains(*t))
        .map(|t| (t, resolver.spread(t)))
        .collect();
    threshold_impact_from_spreads(&observations, range, thresholds)
}

/// One day with at least one Hero violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeroViolationDay {
    pub day: NaiveDate,
    pub violating_mementos: usize,
    /// A same-day memento with the Hero content in its own HTML, if any.
    pub server_rendered_alternative: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeroViolationReport {
    pub threshold: Threshold,
    /// Mementos whose Hero zone is loaded client-side.
    pub scanned: usize,
    pub excluded_server_rendered: usize,
    pub violating: usize,
    pub results: Vec<ResolutionResult>,
    pub days: Vec<HeroViolationDay>,
}

/// Classifies every memento whose HTML lacks the Hero section against the
/// Hero zone's captures, and notes per violating day whether a same-day
/// memento carries the Hero in its HTML.
pub fn hero_violation_scan(
    probes: &[(MementoRecord, HtmlProbeResult)],
    hero_captures: &CaptureSet,
    threshold: Threshold,
) -> HeroViolationReport {
    let resolver = Resolver::new(hero_captures);
    hero_violation_scan_with(probes, |t| resolver.classify(t, threshold), threshold)
}

/// As [`hero_violation_scan`], with resolution delegated to `classify`
/// (e.g. to pick the zone-manager URL of each memento's era).
pub fn hero_violation_scan_with<F>(
    probes: &[(MementoRecord, HtmlProbeResult)],
    classify: F,
    threshold: Threshold,
) -> HeroViolationReport
where
    F: Fn(DateTime<Utc>) -> ResolutionResult,
{
    let mut alternatives: BTreeMap<NaiveDate, &str> = BTreeMap::new();
    for (m, p) in probes {
        if p.has_hero_section_id && p.csr_verdict == CsrVerdict::ServerRendered {
            alternatives
                .entry(m.capture_datetime.date_naive())
                .and_modify(|cur| {
                    if m.access_url.as_str() < *cur {
                        *cur = m.access_url.as_str();
                    }
                })
                .or_insert(m.access_url.as_str());
        }
    }

    let mut results = Vec::new();
    let mut excluded = 0;
    let mut per_day: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for (m, p) in probes {
        if p.has_hero_section_id {
            excluded += 1;
            continue;
        }
        let mut r = classify(m.capture_datetime);
        r.base_access_url = Some(m.access_url.clone());
        if r.classification.is_affected() {
            *per_day.entry(m.capture_datetime.date_naive()).or_insert(0) += 1;
        }
        results.push(r);
    }
    results.sort_by(|a, b| (a.base_datetime, &a.base_access_url).cmp(&(b.base_datetime, &b.base_access_url)));
    let violating = per_day.values().sum();
    let days = per_day
        .into_iter()
        .map(|(day, n)| HeroViolationDay {
            day,
            violating_mementos: n,
            server_rendered_alternative: alternatives.get(&day).map(|s| s.to_string()),
        })
        .collect();
    HeroViolationReport {
        threshold,
        scanned: results.len(),
        excluded_server_rendered: excluded,
        violating,
        results,
        days,
    }
}
