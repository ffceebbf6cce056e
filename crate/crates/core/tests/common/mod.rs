#![allow(dead_code)]

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use replay_audit::cdx::{parse_cdx_line, CaptureSet};
use replay_audit::timestamp::format_stamp;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn at(secs: i64) -> DateTime<Utc> {
    DateTime::<Utc>::from_timestamp(secs, 0).unwrap()
}

/// A capture set of `url` with one 200 record per instant, in input order.
pub fn capture_set(url: &str, instants: &[DateTime<Utc>]) -> CaptureSet {
    let key = replay_audit::urlkey::canonical_urlkey(url).unwrap();
    let recs = instants
        .iter()
        .enumerate()
        .map(|(i, t)| parse_cdx_line(&format!("{key} {} {url} text/html 200 D{i:06} 100", format_stamp(t))).unwrap())
        .collect();
    CaptureSet::new(url, recs, "none").unwrap()
}

/// Linear scan: smallest distance, then earliest instant, then first index.
pub fn brute_nearest(base: DateTime<Utc>, captures: &[DateTime<Utc>]) -> Option<usize> {
    let mut best: Option<(i64, DateTime<Utc>, usize)> = None;
    for (i, &t) in captures.iter().enumerate() {
        let d = (t - base).num_seconds().abs();
        if best.is_none_or(|(bd, bt, _)| (d, t) < (bd, bt)) {
            best = Some((d, t, i));
        }
    }
    best.map(|(_, _, i)| i)
}

pub fn brute_spread(base: DateTime<Utc>, captures: &[DateTime<Utc>]) -> Option<i64> {
    brute_nearest(base, captures).map(|i| (captures[i] - base).num_seconds())
}

pub const HP2_URL: &str =
    "http://www.cnn.com/data/ocs/section/index.html:homepage2-zone-1/views/zones/common/zone-manager.html";

/// Base captures daily at noon over 2015-07-10..=2016-01-06 against a
/// resource captured only on the first and last day.
pub fn seesaw() -> (CaptureSet, CaptureSet) {
    use chrono::{NaiveDate, TimeZone};
    let mut day = NaiveDate::from_ymd_opt(2015, 7, 10).unwrap();
    let last = NaiveDate::from_ymd_opt(2016, 1, 6).unwrap();
    let mut base = Vec::new();
    while day <= last {
        base.push(Utc.from_utc_datetime(&day.and_hms_opt(12, 0, 0).unwrap()));
        day = day.succ_opt().unwrap();
    }
    let resource = [
        Utc.with_ymd_and_hms(2015, 7, 10, 0, 18, 45).unwrap(),
        Utc.with_ymd_and_hms(2016, 1, 6, 23, 34, 5).unwrap(),
    ];
    (
        capture_set("http://www.cnn.com/", &base),
        capture_set(HP2_URL, &resource),
    )
}
