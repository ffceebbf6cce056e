//! CDX and CDXJ index lines, and capture sets built from them.

use std::fmt;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memento::MementoRecord;
use crate::parse_report::ParseReport;
use crate::timestamp::{self, day_start, format_stamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CdxError {
    #[error("malformed CDX line at byte {offset}: {reason}")]
    MalformedCdxLine { offset: usize, reason: String },
    #[error("capture set mixes url keys `{0}` and `{1}`")]
    MixedUrlKeys(String, String),
}

fn malformed(offset: usize, reason: impl Into<String>) -> CdxError {
    CdxError::MalformedCdxLine {
        offset,
        reason: reason.into(),
    }
}

/// HTTP status of a capture, or the `-` sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StatusCode {
    Known(u16),
    #[serde(with = "unknown_status")]
    Unknown,
}

mod unknown_status {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("-")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let raw = String::deserialize(d)?;
        if raw == "-" {
            Ok(())
        } else {
            Err(serde::de::Error::custom("expected `-`"))
        }
    }
}

impl StatusCode {
    fn parse(raw: &str) -> Option<StatusCode> {
        if raw == "-" {
            return Some(StatusCode::Unknown);
        }
        if raw.len() != 3 || !raw.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let code: u16 = raw.parse().ok()?;
        (100..=599).contains(&code).then_some(StatusCode::Known(code))
    }
}

impl fmt::Display for StatusCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatusCode::Known(c) => write!(f, "{c}"),
            StatusCode::Unknown => f.write_str("-"),
        }
    }
}

/// Which line shape a record was read from; kept so classic lines
/// re-serialize byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CdxLayout {
    /// `urlkey timestamp original mimetype status digest length` (CDX API default).
    Short,
    /// `urlkey timestamp original mimetype status digest redirect offset filename`.
    Classic9 {
        redirect: String,
        offset: String,
        filename: String,
    },
    /// `urlkey timestamp original mimetype status digest redirect robotflags length offset filename`.
    Classic11 {
        redirect: String,
        robotflags: String,
        offset: String,
        filename: String,
    },
    /// `urlkey timestamp {json}`.
    Cdxj,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdxRecord {
    pub urlkey: String,
    #[serde(with = "timestamp::stamp_serde")]
    pub timestamp: DateTime<Utc>,
    pub original: String,
    pub mimetype: String,
    pub status: StatusCode,
    pub digest: Option<String>,
    pub length: Option<u64>,
    pub layout: CdxLayout,
}

fn dash_or(v: &Option<String>) -> &str {
    v.as_deref().unwrap_or("-")
}

impl CdxRecord {
    pub fn stamp(&self) -> String {
        format_stamp(&self.timestamp)
    }

    /// Renders in the layout the record was parsed from; CDXJ records
    /// render in the short classic form.
    pub fn to_classic_line(&self) -> String {
        let length = self.length.map_or_else(|| "-".to_string(), |l| l.to_string());
        let head = format!(
            "{} {} {} {} {} {}",
            self.urlkey,
            self.stamp(),
            self.original,
            self.mimetype,
            self.status,
            dash_or(&self.digest)
        );
        match &self.layout {
            CdxLayout::Short | CdxLayout::Cdxj => format!("{head} {length}"),
            CdxLayout::Classic9 {
                redirect,
                offset,
                filename,
            } => format!("{head} {redirect} {offset} {filename}"),
            CdxLayout::Classic11 {
                redirect,
                robotflags,
                offset,
                filename,
            } => format!("{head} {redirect} {robotflags} {length} {offset} {filename}"),
        }
    }
}

/// Splits on ASCII whitespace, keeping each token's byte offset.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, b) in line.bytes().enumerate() {
        let ws = b == b' ' || b == b'\t';
        match (start, ws) {
            (None, false) => start = Some(i),
            (Some(s), true) => {
                out.push((s, &line[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out
}

fn opt_field(raw: &str) -> Option<String> {
    (raw != "-").then(|| raw.to_string())
}

fn parse_length(offset: usize, raw: &str) -> Result<Option<u64>, CdxError> {
    if raw == "-" {
        return Ok(None);
    }
    raw.parse::<u64>()
        .map(Some)
        .map_err(|_| malformed(offset, format!("length `{raw}` is not a non-negative integer")))
}

fn parse_status(offset: usize, raw: &str) -> Result<StatusCode, CdxError> {
    StatusCode::parse(raw).ok_or_else(|| malformed(offset, format!("status `{raw}` is not 100-599 or `-`")))
}

/// Parses one classic (7, 9 or 11 field) CDX line or CDXJ line. The format
/// is picked by the shape of the third token.
pub fn parse_cdx_line(line: &str) -> Result<CdxRecord, CdxError> {
    let line = line.trim_end_matches(['\r', '\n']);
    let toks = tokens(line);
    if toks.len() < 3 {
        let offset = toks.last().map_or(0, |(o, t)| o + t.len());
        return Err(malformed(
            offset,
            format!("expected at least 3 fields, found {}", toks.len()),
        ));
    }
    let (key_off, urlkey) = toks[0];
    if urlkey.is_empty() {
        return Err(malformed(key_off, "empty urlkey"));
    }
    let (ts_off, ts_raw) = toks[1];
    let timestamp = timestamp::parse_stamp(ts_raw).map_err(|e| malformed(ts_off, e.to_string()))?;

    let (third_off, third) = toks[2];
    if third.starts_with('{') {
        return parse_cdxj_tail(urlkey, timestamp, third_off, &line[third_off..]);
    }

    let field = |i: usize| toks[i];
    let (original, mimetype, status, digest, length, layout) = match toks.len() {
        7 => (
            field(2).1,
            field(3).1,
            parse_status(field(4).0, field(4).1)?,
            opt_field(field(5).1),
            parse_length(field(6).0, field(6).1)?,
            CdxLayout::Short,
        ),
        9 => (
            field(2).1,
            field(3).1,
            parse_status(field(4).0, field(4).1)?,
            opt_field(field(5).1),
            None,
            CdxLayout::Classic9 {
                redirect: field(6).1.to_string(),
                offset: field(7).1.to_string(),
                filename: field(8).1.to_string(),
            },
        ),
        11 => (
            field(2).1,
            field(3).1,
            parse_status(field(4).0, field(4).1)?,
            opt_field(field(5).1),
            parse_length(field(8).0, field(8).1)?,
            CdxLayout::Classic11 {
                redirect: field(6).1.to_string(),
                robotflags: field(7).1.to_string(),
                offset: field(9).1.to_string(),
                filename: field(10).1.to_string(),
            },
        ),
        n => {
            let offset = if n > 11 {
                toks[11].0
            } else {
                toks.last().map_or(0, |(o, t)| o + t.len())
            };
            return Err(malformed(offset, format!("expected 7, 9 or 11 fields, found {n}")));
        }
    };
    Ok(CdxRecord {
        urlkey: urlkey.to_string(),
        timestamp,
        original: original.to_string(),
        mimetype: mimetype.to_string(),
        status,
        digest,
        length,
        layout,
    })
}

fn json_str(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_cdxj_tail(urlkey: &str, timestamp: DateTime<Utc>, offset: usize, json: &str) -> Result<CdxRecord, CdxError> {
    let value: serde_json::Value =
        serde_json::from_str(json).map_err(|e| malformed(offset, format!("CDXJ block: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed(offset, "CDXJ block is not an object"))?;
    let get = |k: &str| obj.get(k).and_then(json_str);
    let original = get("url").ok_or_else(|| malformed(offset, "CDXJ block has no `url`"))?;
    let status = match get("status") {
        Some(s) => parse_status(offset, &s)?,
        None => StatusCode::Unknown,
    };
    let length = match get("length") {
        Some(l) => parse_length(offset, &l)?,
        None => None,
    };
    Ok(CdxRecord {
        urlkey: urlkey.to_string(),
        timestamp,
        original,
        mimetype: get("mime").unwrap_or_else(|| "-".into()),
        status,
        digest: get("digest").filter(|d| d != "-"),
        length,
        layout: CdxLayout::Cdxj,
    })
}

/// Parsed CDX API response body.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CdxPage {
    pub records: Vec<CdxRecord>,
    pub report: ParseReport,
    /// Present when the body ends with a blank line and a resume key.
    pub resume_key: Option<String>,
}

/// Parses a whole response body, skipping (and counting) bad lines.
pub fn parse_cdx_body(body: &str) -> CdxPage {
    let mut page = CdxPage::default();
    let lines: Vec<&str> = body.lines().collect();
    let mut end = lines.len();
    while end > 0 && lines[end - 1].trim().is_empty() {
        end -= 1;
    }
    // `showResumeKey=true` appends "\n<key>" after the last record.
    if end >= 2 && lines[end - 2].trim().is_empty() && tokens(lines[end - 1]).len() == 1 {
        page.resume_key = Some(lines[end - 1].trim().to_string());
        end -= 2;
    }
    for (n, line) in lines[..end].iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_cdx_line(line) {
            Ok(rec) => {
                page.report.accepted += 1;
                page.records.push(rec);
            }
            Err(e) => page.report.skip(format!("line {}: {e}", n + 1)),
        }
    }
    page
}

/// Query constraints for capture lookups. Dates are inclusive UTC days.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub status: Option<u16>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    /// Rows per request; enables resume-key pagination when set.
    pub page_size: Option<usize>,
}

impl FilterSpec {
    pub fn status_ok() -> Self {
        FilterSpec {
            status: Some(200),
            ..FilterSpec::default()
        }
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(s) = self.status {
            parts.push(format!("status={s}"));
        }
        if let Some(d) = self.from {
            parts.push(format!("from={}", d.format("%Y%m%d")));
        }
        if let Some(d) = self.to {
            parts.push(format!("to={}", d.format("%Y%m%d")));
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join(" ")
        }
    }

    /// CDX API query parameters (without pagination).
    pub fn query_params(&self) -> Vec<(String, String)> {
        let mut q = vec![("matchType".to_string(), "exact".to_string())];
        if let Some(s) = self.status {
            q.push(("filter".into(), format!("statuscode:{s}")));
        }
        if let Some(d) = self.from {
            q.push(("from".into(), d.format("%Y%m%d").to_string()));
        }
        if let Some(d) = self.to {
            q.push(("to".into(), d.format("%Y%m%d").to_string()));
        }
        q
    }

    pub fn accepts(&self, rec: &CdxRecord) -> bool {
        if let Some(s) = self.status {
            if rec.status != StatusCode::Known(s) {
                return false;
            }
        }
        if let Some(d) = self.from {
            if rec.timestamp < day_start(d) {
                return false;
            }
        }
        if let Some(d) = self.to {
            if rec.timestamp >= day_start(d) + Duration::days(1) {
                return false;
            }
        }
        true
    }
}

pub const DEFAULT_REPLAY_TEMPLATE: &str = "https://web.archive.org/web/{timestamp}/{url}";

/// Captures of one URL in one archive, ascending by timestamp with ties
/// broken by digest and then input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureSet {
    pub original_url: String,
    pub records: Vec<CdxRecord>,
    pub filter_applied: String,
    pub source_archive: String,
    /// URI-M template with `{timestamp}` and `{url}` placeholders.
    pub replay_template: String,
}

impl CaptureSet {
    pub fn new(
        original_url: impl Into<String>,
        mut records: Vec<CdxRecord>,
        filter_applied: impl Into<String>,
    ) -> Result<Self, CdxError> {
        if let Some(first) = records.first() {
            if let Some(other) = records.iter().find(|r| r.urlkey != first.urlkey) {
                return Err(CdxError::MixedUrlKeys(first.urlkey.clone(), other.urlkey.clone()));
            }
        }
        records.sort_by(|a, b| (a.timestamp, &a.digest).cmp(&(b.timestamp, &b.digest)));
        Ok(CaptureSet {
            original_url: original_url.into(),
            records,
            filter_applied: filter_applied.into(),
            source_archive: "web.archive.org".into(),
            replay_template: DEFAULT_REPLAY_TEMPLATE.into(),
        })
    }

    pub fn empty(original_url: impl Into<String>) -> Self {
        CaptureSet::new(original_url, Vec::new(), "none").expect("empty set is valid")
    }

    pub fn with_archive(mut self, name: impl Into<String>, replay_template: impl Into<String>) -> Self {
        self.source_archive = name.into();
        self.replay_template = replay_template.into();
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = DateTime<Utc>> + '_ {
        self.records.iter().map(|r| r.timestamp)
    }

    pub fn memento(&self, rec: &CdxRecord) -> MementoRecord {
        let access_url = self
            .replay_template
            .replace("{timestamp}", &rec.stamp())
            .replace("{url}", &rec.original);
        MementoRecord {
            original_url: rec.original.clone(),
            capture_datetime: rec.timestamp,
            access_url,
            source_archive: self.source_archive.clone(),
        }
    }

    /// Merges captures of several URLs (e.g. one zone under several
    /// filename eras) into one set. The url-key check is bypassed.
    pub fn merged(original_url: impl Into<String>, sets: &[&CaptureSet], filter: impl Into<String>) -> CaptureSet {
        let mut records: Vec<CdxRecord> = sets.iter().flat_map(|s| s.records.iter().cloned()).collect();
        records.sort_by(|a, b| (a.timestamp, &a.digest).cmp(&(b.timestamp, &b.digest)));
        let template = sets
            .first()
            .map(|s| (s.source_archive.clone(), s.replay_template.clone()));
        let (archive, replay) = template.unwrap_or_else(|| ("web.archive.org".into(), DEFAULT_REPLAY_TEMPLATE.into()));
        CaptureSet {
            original_url: original_url.into(),
            records,
            filter_applied: filter.into(),
            source_archive: archive,
            replay_template: replay,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_line() {
        let rec = parse_cdx_line("com,cnn)/ 20150424150304 http://www.cnn.com/ text/html 200 AAAA 5432").unwrap();
        assert_eq!(rec.status, StatusCode::Known(200));
        assert_eq!(timestamp::format_iso(&rec.timestamp), "2015-04-24T15:03:04Z");
        assert_eq!(rec.digest.as_deref(), Some("AAAA"));
        assert_eq!(rec.length, Some(5432));
        assert_eq!(rec.layout, CdxLayout::Short);
    }

    #[test]
    fn dash_sentinels() {
        let rec = parse_cdx_line("com,cnn)/ 20150424150304 http://www.cnn.com/ text/html - - -").unwrap();
        assert_eq!(rec.status, StatusCode::Unknown);
        assert_eq!(rec.digest, None);
        assert_eq!(rec.length, None);
        assert_eq!(
            rec.to_classic_line(),
            "com,cnn)/ 20150424150304 http://www.cnn.com/ text/html - - -"
        );
    }

    #[test]
    fn eleven_field_round_trip() {
        let line = "com,cnn)/ 20150424150304 http://www.cnn.com/ text/html 200 SHA1X - - 5432 1000 crawl-1.warc.gz";
        let rec = parse_cdx_line(line).unwrap();
        assert_eq!(rec.length, Some(5432));
        assert_eq!(rec.to_classic_line(), line);
        let nine = "com,cnn)/ 20150424150304 http://www.cnn.com/ text/html 200 SHA1X - 1000 crawl-1.warc.gz";
        assert_eq!(parse_cdx_line(nine).unwrap().to_classic_line(), nine);
    }

    #[test]
    fn cdxj_line() {
        let line = r#"com,cnn)/ 20160106233405 {"url": "http://www.cnn.com/", "mime": "text/html", "status": "200", "digest": "D", "length": "77", "offset": "12", "filename": "x.warc.gz"}"#;
        let rec = parse_cdx_line(line).unwrap();
        assert_eq!(rec.layout, CdxLayout::Cdxj);
        assert_eq!(rec.original, "http://www.cnn.com/");
        assert_eq!(rec.status, StatusCode::Known(200));
        assert_eq!(rec.length, Some(77));
        let numeric = r#"com,cnn)/ 20160106233405 {"url":"http://www.cnn.com/","status":301}"#;
        assert_eq!(parse_cdx_line(numeric).unwrap().status, StatusCode::Known(301));
    }

    #[test]
    fn malformed_offsets() {
        let err = parse_cdx_line("com,cnn)/ 2015x424 http://www.cnn.com/ text/html 200 A 1").unwrap_err();
        assert!(matches!(err, CdxError::MalformedCdxLine { offset: 10, .. }));
        let err = parse_cdx_line("com,cnn)/ 20150424150304 http://www.cnn.com/ text/html 999 A 1").unwrap_err();
        assert!(matches!(err, CdxError::MalformedCdxLine { offset: 55, .. }));
        let err = parse_cdx_line("com,cnn)/ 20150424150304 http://www.cnn.com/ text/html 200 A x").unwrap_err();
        assert!(matches!(err, CdxError::MalformedCdxLine { offset: 61, .. }));
        assert!(parse_cdx_line("").is_err());
        assert!(parse_cdx_line("a b c d").is_err());
        assert!(parse_cdx_line("com,cnn)/ 20150424150304 {not json").is_err());
    }

    #[test]
    fn body_with_resume_key_and_junk() {
        let body = "com,cnn)/ 20150424150304 http://www.cnn.com/ text/html 200 A 1\n\
                    garbage line\n\
                    com,cnn)/ 20150425150304 http://www.cnn.com/ text/html 200 B 1\n\
                    \n\
                    com%2Ccnn%29%2F+20150425150304\n";
        let page = parse_cdx_body(body);
        assert_eq!(page.records.len(), 2);
        assert_eq!(page.report.skipped, 1);
        assert_eq!(page.resume_key.as_deref(), Some("com%2Ccnn%29%2F+20150425150304"));
        assert!(parse_cdx_body("").records.is_empty());
    }

    #[test]
    fn capture_set_ordering() {
        let lines = [
            "k)/ 20150102000000 http://k/ text/html 200 B 1",
            "k)/ 20150101000000 http://k/ text/html 200 Z 1",
            "k)/ 20150102000000 http://k/ text/html 200 A 1",
        ];
        let recs: Vec<_> = lines.iter().map(|l| parse_cdx_line(l).unwrap()).collect();
        let set = CaptureSet::new("http://k/", recs, "none").unwrap();
        let digests: Vec<_> = set.records.iter().map(|r| r.digest.clone().unwrap()).collect();
        assert_eq!(digests, ["Z", "A", "B"]);
        let m = set.memento(&set.records[0]);
        assert_eq!(m.access_url, "https://web.archive.org/web/20150101000000/http://k/");
    }

    #[test]
    fn mixed_keys_rejected() {
        let a = parse_cdx_line("a)/ 20150101000000 http://a/ text/html 200 A 1").unwrap();
        let b = parse_cdx_line("b)/ 20150101000000 http://b/ text/html 200 A 1").unwrap();
        assert!(matches!(
            CaptureSet::new("http://a/", vec![a, b], "none"),
            Err(CdxError::MixedUrlKeys(..))
        ));
    }

    #[test]
    fn filter_bounds_inclusive_days() {
        let f = FilterSpec {
            status: Some(200),
            from: Some(NaiveDate::from_ymd_opt(2015, 4, 24).unwrap()),
            to: Some(NaiveDate::from_ymd_opt(2015, 4, 24).unwrap()),
            page_size: None,
        };
        let inside = parse_cdx_line("k)/ 20150424235959 http://k/ text/html 200 A 1").unwrap();
        let after = parse_cdx_line("k)/ 20150425000000 http://k/ text/html 200 A 1").unwrap();
        let redirect = parse_cdx_line("k)/ 20150424120000 http://k/ text/html 301 A 1").unwrap();
        assert!(f.accepts(&inside));
        assert!(!f.accepts(&after));
        assert!(!f.accepts(&redirect));
        assert_eq!(f.describe(), "status=200 from=20150424 to=20150424");
    }
}
