//! Memento records and TimeMaps: parsing link-format TimeMaps, rendering
//! them back, and aggregating TimeMaps from several archives.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::linkformat::{format_link, parse_links, LinkValue};
use crate::parse_report::ParseReport;
use crate::timestamp::{self, format_http_date};
use crate::urlkey::canonical_urlkey;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MementoError {
    #[error("malformed TimeMap: {0}")]
    MalformedTimeMap(String),
    #[error("TimeMaps disagree on original URL: `{0}` vs `{1}`")]
    MixedOriginals(String, String),
    #[error("no TimeMaps to aggregate")]
    NothingToAggregate,
}

/// One capture of an original resource.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MementoRecord {
    pub original_url: String,
    #[serde(with = "timestamp::stamp_serde")]
    pub capture_datetime: DateTime<Utc>,
    /// The URI-M.
    pub access_url: String,
    pub source_archive: String,
}

impl MementoRecord {
    pub fn stamp(&self) -> String {
        timestamp::format_stamp(&self.capture_datetime)
    }

    fn sort_key(&self) -> (DateTime<Utc>, &str, &str) {
        (self.capture_datetime, &self.source_archive, &self.access_url)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeMap {
    pub original_url: String,
    /// Ascending by capture datetime, then archive, then URI-M.
    pub mementos: Vec<MementoRecord>,
    /// Set by the fetch layer; `None` for TimeMaps parsed from a string.
    pub retrieved_at: Option<DateTime<Utc>>,
}

impl TimeMap {
    pub fn empty(original_url: impl Into<String>) -> Self {
        TimeMap {
            original_url: original_url.into(),
            mementos: Vec::new(),
            retrieved_at: None,
        }
    }

    /// Sorts and removes exact duplicates.
    fn normalize(&mut self) {
        self.mementos.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        self.mementos.dedup_by(|a, b| a.sort_key() == b.sort_key());
    }

    /// Capture counts per source archive, for a roster summary table.
    pub fn archive_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for m in &self.mementos {
            *counts.entry(m.source_archive.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Keeps only mementos captured at or after `since`.
    pub fn since(&self, since: DateTime<Utc>) -> TimeMap {
        TimeMap {
            original_url: self.original_url.clone(),
            mementos: self
                .mementos
                .iter()
                .filter(|m| m.capture_datetime >= since)
                .cloned()
                .collect(),
            retrieved_at: self.retrieved_at,
        }
    }

    /// Renders as `application/link-format`.
    pub fn to_link_format(&self) -> String {
        let mut entries = vec![format_link(&LinkValue {
            target: self.original_url.clone(),
            params: vec![("rel".into(), "original".into())],
        })];
        for m in &self.mementos {
            entries.push(format_link(&LinkValue {
                target: m.access_url.clone(),
                params: vec![
                    ("rel".into(), "memento".into()),
                    ("datetime".into(), format_http_date(&m.capture_datetime)),
                ],
            }));
        }
        let mut body = entries.join(",\n");
        body.push('\n');
        body
    }
}

/// Parser output: the TimeMap, skipped entries, and continuation pages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTimeMap {
    pub timemap: TimeMap,
    pub report: ParseReport,
    /// Targets of `rel="timemap"` links, for paginated TimeMaps.
    pub continuations: Vec<String>,
}

fn is_absolute(url: &str) -> bool {
    Url::parse(url).map(|u| u.has_host()).unwrap_or(false)
}

/// `https://host/web/20150424150304/http://www.cnn.com/` -> `http://www.cnn.com/`.
fn original_from_urim(urim: &str) -> Option<String> {
    let (_, rest) = urim.split_once("/web/")?;
    let (stamp, url) = rest.split_once('/')?;
    let digits = stamp.bytes().take_while(|b| b.is_ascii_digit()).count();
    (digits >= 4 && is_absolute(url)).then(|| url.to_string())
}

/// Parses a link-format TimeMap. Memento entries with missing or
/// unparseable datetimes are dropped and counted in the report.
pub fn parse_link_timemap(body: &str, source_archive: &str) -> Result<ParsedTimeMap, MementoError> {
    let links = parse_links(body).map_err(|e| MementoError::MalformedTimeMap(e.to_string()))?;
    let original = links
        .iter()
        .find(|l| l.has_rel("original"))
        .map(|l| l.target.clone())
        .or_else(|| {
            links
                .iter()
                .filter(|l| l.has_rel("memento"))
                .find_map(|l| original_from_urim(&l.target))
        })
        .ok_or_else(|| MementoError::MalformedTimeMap("no rel=\"original\" entry".into()))?;
    if !is_absolute(&original) {
        return Err(MementoError::MalformedTimeMap(format!(
            "original `{original}` is not an absolute URL"
        )));
    }

    let mut report = ParseReport::default();
    let mut mementos = Vec::new();
    let mut continuations = Vec::new();
    for link in &links {
        if link.has_rel("timemap") {
            let link_format = link
                .param("type")
                .is_none_or(|t| t.eq_ignore_ascii_case("application/link-format"));
            if link_format && !continuations.contains(&link.target) {
                continuations.push(link.target.clone());
            }
        }
        if !link.has_rel("memento") {
            continue;
        }
        let Some(raw) = link.param("datetime") else {
            report.skip(format!("<{}>: missing datetime", link.target));
            continue;
        };
        let datetime = match timestamp::parse_http_date(raw) {
            Ok(dt) => dt,
            Err(e) => {
                report.skip(format!("<{}>: {e}", link.target));
                continue;
            }
        };
        if !is_absolute(&link.target) {
            report.skip(format!("<{}>: not an absolute URL", link.target));
            continue;
        }
        report.accepted += 1;
        mementos.push(MementoRecord {
            original_url: original.clone(),
            capture_datetime: datetime,
            access_url: link.target.clone(),
            source_archive: source_archive.to_string(),
        });
    }

    let mut timemap = TimeMap {
        original_url: original,
        mementos,
        retrieved_at: None,
    };
    timemap.normalize();
    Ok(ParsedTimeMap {
        timemap,
        report,
        continuations,
    })
}

/// Lossy-UTF-8 front end for arbitrary bytes.
pub fn parse_link_timemap_bytes(body: &[u8], source_archive: &str) -> Result<ParsedTimeMap, MementoError> {
    parse_link_timemap(&String::from_utf8_lossy(body), source_archive)
}

fn canonical_or_raw(url: &str) -> String {
    canonical_urlkey(url).unwrap_or_else(|_| url.to_string())
}

/// Union of TimeMaps for the same original URL. Captures are deduplicated on
/// (capture datetime, URI-M); same-instant captures with distinct URI-Ms from
/// different archives are all kept.
pub fn aggregate_timemaps(timemaps: &[TimeMap]) -> Result<TimeMap, MementoError> {
    let first = timemaps.first().ok_or(MementoError::NothingToAggregate)?;
    let key = canonical_or_raw(&first.original_url);
    for tm in &timemaps[1..] {
        if canonical_or_raw(&tm.original_url) != key {
            return Err(MementoError::MixedOriginals(
                first.original_url.clone(),
                tm.original_url.clone(),
            ));
        }
    }
    // The lexicographically smallest original spelling wins, independent of input order.
    let original_url = timemaps
        .iter()
        .map(|t| t.original_url.as_str())
        .min()
        .expect("non-empty")
        .to_string();
    let mut mementos: Vec<MementoRecord> = timemaps.iter().flat_map(|t| t.mementos.iter().cloned()).collect();
    mementos.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let mut out: Vec<MementoRecord> = Vec::with_capacity(mementos.len());
    let mut seen = std::collections::HashSet::new();
    for m in mementos {
        if seen.insert((m.capture_datetime, m.access_url.clone())) {
            out.push(m);
        }
    }
    let retrieved_at = timemaps.iter().filter_map(|t| t.retrieved_at).max();
    Ok(TimeMap {
        original_url,
        mementos: out,
        retrieved_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timestamp::parse_stamp;

    const ONE: &str = r#"<http://www.cnn.com/>; rel="original",
<https://web.archive.org/web/timemap/link/http://www.cnn.com/>; rel="self"; type="application/link-format",
<https://web.archive.org/web/20150424150304/http://www.cnn.com/>; rel="memento"; datetime="Fri, 24 Apr 2015 15:03:04 GMT""#;

    fn memento(stamp: &str, archive: &str) -> MementoRecord {
        MementoRecord {
            original_url: "http://www.cnn.com/".into(),
            capture_datetime: parse_stamp(stamp).unwrap(),
            access_url: format!("https://{archive}/web/{stamp}/http://www.cnn.com/"),
            source_archive: archive.into(),
        }
    }

    fn tm(stamps: &[&str], archive: &str) -> TimeMap {
        let mut t = TimeMap::empty("http://www.cnn.com/");
        t.mementos = stamps.iter().map(|s| memento(s, archive)).collect();
        t.normalize();
        t
    }

    #[test]
    fn single_memento() {
        let parsed = parse_link_timemap(ONE, "ia").unwrap();
        let t = parsed.timemap;
        assert_eq!(t.original_url, "http://www.cnn.com/");
        assert_eq!(t.mementos.len(), 1);
        assert_eq!(
            crate::timestamp::format_iso(&t.mementos[0].capture_datetime),
            "2015-04-24T15:03:04Z"
        );
        assert_eq!(t.mementos[0].source_archive, "ia");
        assert_eq!(parsed.report.accepted, 1);
        // rel="self" is not a continuation.
        assert!(parsed.continuations.is_empty());
    }

    #[test]
    fn original_only_is_empty() {
        let parsed = parse_link_timemap(r#"<http://www.cnn.com/>; rel="original""#, "ia").unwrap();
        assert!(parsed.timemap.mementos.is_empty());
    }

    #[test]
    fn shuffled_entries_come_out_sorted() {
        let stamps = [
            "20160106233405",
            "20150424150304",
            "20171231000000",
            "20150710001845",
            "20151008120000",
        ];
        let mut body = String::from("<http://www.cnn.com/>; rel=\"original\"");
        for s in stamps {
            let dt = parse_stamp(s).unwrap();
            body.push_str(&format!(
                ",\n<https://web.archive.org/web/{s}/http://www.cnn.com/>; rel=\"memento\"; datetime=\"{}\"",
                format_http_date(&dt)
            ));
        }
        let parsed = parse_link_timemap(&body, "ia").unwrap().timemap;
        let mut expected: Vec<String> = stamps.iter().map(|s| s.to_string()).collect();
        expected.sort_unstable();
        let got: Vec<String> = parsed.mementos.iter().map(MementoRecord::stamp).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn bad_datetimes_dropped_and_counted() {
        let body = r#"<http://www.cnn.com/>; rel="original",
<https://a/web/1/http://www.cnn.com/>; rel="memento"; datetime="not a date",
<https://a/web/2/http://www.cnn.com/>; rel="memento",
<https://a/web/20150424150304/http://www.cnn.com/>; rel="memento"; datetime="Fri, 24 Apr 2015 15:03:04 GMT""#;
        let parsed = parse_link_timemap(body, "a").unwrap();
        assert_eq!(parsed.timemap.mementos.len(), 1);
        assert_eq!(parsed.report.skipped, 2);
        assert_eq!(parsed.report.accepted, 1);
    }

    #[test]
    fn malformed_bodies() {
        assert!(matches!(
            parse_link_timemap("", "a"),
            Err(MementoError::MalformedTimeMap(_))
        ));
        assert!(matches!(
            parse_link_timemap("<html>oops</html>", "a"),
            Err(MementoError::MalformedTimeMap(_))
        ));
        assert!(matches!(
            parse_link_timemap(
                r#"<https://a/x>; rel="memento"; datetime="Fri, 24 Apr 2015 15:03:04 GMT""#,
                "a"
            ),
            Err(MementoError::MalformedTimeMap(_))
        ));
    }

    #[test]
    fn continuations_collected() {
        let body = r#"<http://www.cnn.com/>; rel="original",
<https://ia/tm?page=2>; rel="timemap"; type="application/link-format",
<https://ia/tm.json>; rel="timemap"; type="application/json""#;
        let parsed = parse_link_timemap(body, "ia").unwrap();
        assert_eq!(parsed.continuations, vec!["https://ia/tm?page=2".to_string()]);
    }

    #[test]
    fn link_format_round_trip() {
        let t = tm(&["20150424150304", "20150710001845", "20160106233405"], "ia");
        let back = parse_link_timemap(&t.to_link_format(), "ia").unwrap().timemap;
        assert_eq!(back, t);
    }

    #[test]
    fn disjoint_union() {
        let a = tm(&["20150101000000", "20150102000000", "20150103000000"], "ia");
        let b = tm(&["20150101000001", "20150102000001", "20150103000001"], "ait");
        let agg = aggregate_timemaps(&[a, b]).unwrap();
        assert_eq!(agg.mementos.len(), 6);
        assert!(agg
            .mementos
            .windows(2)
            .all(|w| w[0].capture_datetime <= w[1].capture_datetime));
        let counts = agg.archive_counts();
        assert_eq!(counts["ia"], 3);
        assert_eq!(counts["ait"], 3);
    }

    #[test]
    fn idempotent_and_same_instant_kept() {
        let a = tm(&["20150101000000", "20150102000000"], "ia");
        assert_eq!(aggregate_timemaps(&[a.clone(), a.clone()]).unwrap(), a);
        let b = tm(&["20150101000000"], "ait");
        let agg = aggregate_timemaps(&[a, b]).unwrap();
        assert_eq!(agg.mementos.len(), 3, "same instant, different URI-M, both kept");
    }

    #[test]
    fn mixed_originals_rejected() {
        let a = tm(&["20150101000000"], "ia");
        let mut b = TimeMap::empty("http://www.bbc.co.uk/");
        b.mementos.clear();
        assert!(matches!(
            aggregate_timemaps(&[a.clone(), b]),
            Err(MementoError::MixedOriginals(..))
        ));
        // Scheme and host case variants share a key.
        let c = TimeMap::empty("https://WWW.CNN.com/");
        assert!(aggregate_timemaps(&[a, c]).is_ok());
        assert_eq!(aggregate_timemaps(&[]), Err(MementoError::NothingToAggregate));
    }
}
