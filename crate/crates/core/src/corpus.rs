//! Probing a directory of saved base pages named `<14-digit stamp>.html`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::probe::{probe_html_with, CsrVerdict, HtmlProbeResult, ProbeOptions};
use crate::timestamp::parse_stamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub file: String,
    #[serde(with = "crate::timestamp::stamp_serde")]
    pub datetime: DateTime<Utc>,
    pub result: HtmlProbeResult,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    /// Ascending by capture time, then file name.
    pub entries: Vec<CorpusEntry>,
    pub counts: BTreeMap<CsrVerdict, usize>,
    /// Files that were unreadable or not named `<14 digits>.html`.
    pub skipped: Vec<String>,
}

fn stamp_of(name: &str) -> Option<DateTime<Utc>> {
    let stem = name.strip_suffix(".html")?;
    if stem.len() != 14 || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    parse_stamp(stem).ok()
}

pub fn probe_corpus(dir: &Path, opts: &ProbeOptions) -> io::Result<CorpusReport> {
    let mut report = CorpusReport::default();
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in names {
        let Some(datetime) = stamp_of(&name) else {
            report.skipped.push(name);
            continue;
        };
        let bytes = match fs::read(dir.join(&name)) {
            Ok(b) => b,
            Err(_) => {
                report.skipped.push(name);
                continue;
            }
        };
        let result = probe_html_with(&String::from_utf8_lossy(&bytes), opts);
        *report.counts.entry(result.csr_verdict).or_insert(0) += 1;
        report.entries.push(CorpusEntry {
            file: name,
            datetime,
            result,
        });
    }
    report
        .entries
        .sort_by(|a, b| (a.datetime, &a.file).cmp(&(b.datetime, &b.file)));
    Ok(report)
}
