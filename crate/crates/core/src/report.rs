//! Audit report schema and its JSON / CSV / plot-data renderings.
//!
//! The column layouts written here are documented in `docs/report-format.md`;
//! keep the two in step.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Sampling;
use crate::era::ZoneUrl;
use crate::metrics::{DateRange, DaySeriesPoint, HeroViolationReport, ThresholdImpactRow, SECONDS_PER_DAY};
use crate::parse_report::ParseReport;
use crate::probe::CsrVerdict;
use crate::resolve::ResolutionResult;
use crate::timestamp::{format_iso, format_stamp};
use crate::zones::ZoneSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub target_url: String,
    pub archive: String,
    pub date_range: DateRange,
    pub base: BaseSummary,
    #[serde(default)]
    pub timemap_summary: Option<BTreeMap<String, usize>>,
    pub zones: Vec<ZoneReport>,
    #[serde(default)]
    pub hero: Option<HeroViolationReport>,
    #[serde(default)]
    pub probes: Vec<ProbeRow>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
    pub partial_failures: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSummary {
    pub url: String,
    pub filter: String,
    pub total_captures: usize,
    pub sampled: usize,
    pub sampling: Sampling,
    pub parse_report: ParseReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneCaptureSource {
    pub url: ZoneUrl,
    pub captures: usize,
    /// Set when the lookup failed and the URL was treated as uncaptured.
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneReport {
    pub zone: ZoneSpec,
    pub sources: Vec<ZoneCaptureSource>,
    /// Rows for sampled base captures that request this zone client-side.
    pub results: Vec<ResolutionResult>,
    /// Over every in-range base capture that requests the zone.
    pub day_series: Vec<DaySeriesPoint>,
    pub threshold_impact: Vec<ThresholdImpactRow>,
    /// Base captures skipped because their HTML was not probed while the
    /// zone was only sometimes client-side.
    pub undetermined: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRow {
    #[serde(with = "crate::timestamp::stamp_serde")]
    pub datetime: DateTime<Utc>,
    pub access_url: String,
    pub has_hero_section_id: bool,
    pub content_word_count: usize,
    pub zones_declared: usize,
    pub csr_verdict: CsrVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchRecord {
    pub what: String,
    pub url: String,
    #[serde(with = "crate::timestamp::stamp_serde")]
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    /// Endpoint templates as used, keyed by endpoint name.
    pub endpoints: BTreeMap<String, String>,
    pub fetches: Vec<FetchRecord>,
    pub resolution_model: String,
    /// Wall-clock time of the run; excluded from [`AuditReport::content_hash`].
    #[serde(default)]
    pub generated_at: Option<String>,
}

impl AuditReport {
    /// SHA-256 of the JSON form with `generated_at` cleared. Two runs over
    /// the same cache and config agree on it.
    pub fn content_hash(&self) -> String {
        let mut clone = self.clone();
        clone.provenance.generated_at = None;
        let json = serde_json::to_vec(&clone).expect("report serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Reads a report; unknown fields are ignored, newer schema versions rejected.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let report: AuditReport = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if report.schema_version > SCHEMA_VERSION {
            return Err(format!(
                "report schema {} is newer than supported {}",
                report.schema_version, SCHEMA_VERSION
            ));
        }
        Ok(report)
    }

    pub fn result_rows(&self) -> usize {
        self.zones.iter().map(|z| z.results.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Plotdata,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "plotdata" => Ok(ReportFormat::Plotdata),
            other => Err(format!("unknown format `{other}` (json, csv, plotdata)")),
        }
    }
}

fn day_stamp(d: NaiveDate) -> String {
    d.format("%Y%m%d").to_string()
}

fn day_iso(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

fn days(seconds: i64) -> String {
    format!("{:.6}", seconds as f64 / SECONDS_PER_DAY as f64)
}

pub const RESOLUTION_HEADER: [&str; 13] = [
    "zone_id",
    "base_stamp",
    "base_iso",
    "base_access_url",
    "resource_url",
    "resolved_stamp",
    "resolved_iso",
    "resolved_access_url",
    "spread_seconds",
    "spread_days",
    "classification",
    "threshold",
    "threshold_seconds",
];

pub const DAY_SERIES_HEADER: [&str; 6] = [
    "zone_id",
    "day_stamp",
    "day_iso",
    "mean_spread_days",
    "spread_sum_seconds",
    "memento_count",
];

pub const THRESHOLD_HEADER: [&str; 11] = [
    "zone_id",
    "range_start_stamp",
    "range_start_iso",
    "range_end_stamp",
    "range_end_iso",
    "threshold",
    "threshold_seconds",
    "total_mementos",
    "total_days",
    "affected_mementos",
    "affected_days",
];

pub const HERO_DAYS_HEADER: [&str; 4] = [
    "day_stamp",
    "day_iso",
    "violating_mementos",
    "server_rendered_alternative",
];

pub const PROBES_HEADER: [&str; 7] = [
    "stamp",
    "iso",
    "access_url",
    "csr_verdict",
    "content_word_count",
    "has_hero_section_id",
    "zones_declared",
];

fn resolution_record(zone_id: &str, r: &ResolutionResult) -> Vec<String> {
    let (rs, ri, ru) = match &r.resolved {
        Some(m) => (
            format_stamp(&m.capture_datetime),
            format_iso(&m.capture_datetime),
            m.access_url.clone(),
        ),
        None => Default::default(),
    };
    vec![
        zone_id.to_string(),
        format_stamp(&r.base_datetime),
        format_iso(&r.base_datetime),
        r.base_access_url.clone().unwrap_or_default(),
        r.resource_url.clone(),
        rs,
        ri,
        ru,
        r.spread_seconds.map(|s| s.to_string()).unwrap_or_default(),
        r.spread_seconds.map(days).unwrap_or_default(),
        r.classification.to_string(),
        r.threshold.to_string(),
        r.threshold.secs().to_string(),
    ]
}

fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> io::Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()
}

/// Writes the report in each requested format under `out_dir` and returns
/// the files written.
pub fn emit_report(report: &AuditReport, formats: &[ReportFormat], out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for format in formats {
        match format {
            ReportFormat::Json => {
                let path = out_dir.join("report.json");
                fs::write(&path, report.to_json())?;
                written.push(path);
            }
            ReportFormat::Csv => written.extend(emit_csv(report, out_dir)?),
            ReportFormat::Plotdata => written.extend(emit_plotdata(report, out_dir)?),
        }
    }
    Ok(written)
}

fn emit_csv(report: &AuditReport, out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();

    let path = out_dir.join("resolution.csv");
    let rows = report
        .zones
        .iter()
        .flat_map(|z| z.results.iter().map(move |r| resolution_record(&z.zone.id, r)));
    write_csv(&path, &RESOLUTION_HEADER, rows)?;
    written.push(path);

    let path = out_dir.join("day_series.csv");
    let rows = report.zones.iter().flat_map(|z| {
        z.day_series.iter().map(move |p| {
            vec![
                z.zone.id.clone(),
                day_stamp(p.day),
                day_iso(p.day),
                format!("{:.6}", p.mean_spread_days),
                p.spread_sum_seconds.to_string(),
                p.memento_count.to_string(),
            ]
        })
    });
    write_csv(&path, &DAY_SERIES_HEADER, rows)?;
    written.push(path);

    let path = out_dir.join("threshold_impact.csv");
    let rows = report.zones.iter().flat_map(|z| {
        z.threshold_impact.iter().map(move |t| {
            vec![
                z.zone.id.clone(),
                day_stamp(t.date_range.start),
                day_iso(t.date_range.start),
                day_stamp(t.date_range.end),
                day_iso(t.date_range.end),
                t.threshold.to_string(),
                t.threshold.secs().to_string(),
                t.total_mementos.to_string(),
                t.total_days.to_string(),
                t.affected_mementos.to_string(),
                t.affected_days.to_string(),
            ]
        })
    });
    write_csv(&path, &THRESHOLD_HEADER, rows)?;
    written.push(path);

    let path = out_dir.join("hero_resolution.csv");
    let hero_rows: Vec<Vec<String>> = report
        .hero
        .iter()
        .flat_map(|h| {
            h.results
                .iter()
                .map(|r| resolution_record(crate::probe::HERO_ZONE_ID, r))
        })
        .collect();
    write_csv(&path, &RESOLUTION_HEADER, hero_rows)?;
    written.push(path);

    let path = out_dir.join("hero_days.csv");
    let rows: Vec<Vec<String>> = report
        .hero
        .iter()
        .flat_map(|h| {
            h.days.iter().map(|d| {
                vec![
                    day_stamp(d.day),
                    day_iso(d.day),
                    d.violating_mementos.to_string(),
                    d.server_rendered_alternative.clone().unwrap_or_default(),
                ]
            })
        })
        .collect();
    write_csv(&path, &HERO_DAYS_HEADER, rows)?;
    written.push(path);

    let path = out_dir.join("probes.csv");
    let rows = report.probes.iter().map(|p| {
        vec![
            format_stamp(&p.datetime),
            format_iso(&p.datetime),
            p.access_url.clone(),
            p.csr_verdict.as_str().to_string(),
            p.content_word_count.to_string(),
            p.has_hero_section_id.to_string(),
            p.zones_declared.to_string(),
        ]
    });
    write_csv(&path, &PROBES_HEADER, rows)?;
    written.push(path);

    Ok(written)
}

/// One `plot/<zone_id>.dat` per zone: `day<TAB>mean_spread_days` lines
/// after a `#` header.
fn emit_plotdata(report: &AuditReport, out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    let dir = out_dir.join("plot");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for z in &report.zones {
        let mut body = String::from("# day\tmean_spread_days\n");
        for p in &z.day_series {
            body.push_str(&format!("{}\t{:.6}\n", day_iso(p.day), p.mean_spread_days));
        }
        let path = dir.join(format!("{}.dat", sanitize(&z.zone.id)));
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
