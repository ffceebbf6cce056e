//! Capture datetimes: 14-digit Wayback stamps and RFC 1123 dates, all
//! normalized to UTC seconds.

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use thiserror::Error;

/// Format string for the `YYYYMMDDhhmmss` form.
const STAMP_FORMAT: &str = "%Y%m%d%H%M%S";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimestampError {
    #[error("timestamp `{0}` is not 4-14 ASCII digits of even length")]
    BadShape(String),
    #[error("timestamp `{0}` does not name a valid UTC instant")]
    OutOfRange(String),
    #[error("`{0}` is not an RFC 1123 date")]
    BadHttpDate(String),
}

/// Parses a Wayback-style stamp. Truncated stamps (`YYYY`, `YYYYMM`,
/// `YYYYMMDD`, ...) are padded to the earliest instant they denote, so
/// `20150424` is midnight of that day.
pub fn parse_stamp(stamp: &str) -> Result<DateTime<Utc>, TimestampError> {
    let len = stamp.len();
    if !(4..=14).contains(&len) || !len.is_multiple_of(2) || !stamp.bytes().all(|b| b.is_ascii_digit()) {
        return Err(TimestampError::BadShape(stamp.to_string()));
    }
    // Month and day pad to 01, time fields to 00.
    const PAD: &str = "00000101000000";
    let mut full = String::with_capacity(14);
    full.push_str(stamp);
    full.push_str(&PAD[len..]);
    NaiveDateTime::parse_from_str(&full, STAMP_FORMAT)
        .map(|dt| dt.and_utc())
        .map_err(|_| TimestampError::OutOfRange(stamp.to_string()))
}

/// Renders the 14-digit form. Years outside 0..=9999 cannot be rendered in
/// 14 digits; callers only construct those through [`parse_stamp`], which
/// cannot produce them.
pub fn format_stamp(dt: &DateTime<Utc>) -> String {
    dt.format(STAMP_FORMAT).to_string()
}

/// Parses an RFC 1123 date such as `Fri, 24 Apr 2015 15:03:04 GMT`.
pub fn parse_http_date(value: &str) -> Result<DateTime<Utc>, TimestampError> {
    DateTime::parse_from_rfc2822(value.trim())
        .map(|dt| dt.with_timezone(&Utc))
        .map_err(|_| TimestampError::BadHttpDate(value.to_string()))
}

pub fn format_http_date(dt: &DateTime<Utc>) -> String {
    dt.format("%a, %d %b %Y %H:%M:%S GMT").to_string()
}

pub fn format_iso(dt: &DateTime<Utc>) -> String {
    dt.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Midnight UTC at the start of `day`.
pub fn day_start(day: NaiveDate) -> DateTime<Utc> {
    Utc.from_utc_datetime(&day.and_hms_opt(0, 0, 0).expect("midnight exists"))
}

/// Parses a date given either as ISO `YYYY-MM-DD` or as an 8-digit stamp.
pub fn parse_day(value: &str) -> Result<NaiveDate, TimestampError> {
    let value = value.trim();
    if let Ok(d) = NaiveDate::parse_from_str(value, "%Y-%m-%d") {
        return Ok(d);
    }
    if value.len() == 8 {
        return parse_stamp(value).map(|dt| dt.date_naive());
    }
    Err(TimestampError::BadShape(value.to_string()))
}

/// Parses either a stamp or an RFC 3339 instant.
pub fn parse_instant(value: &str) -> Result<DateTime<Utc>, TimestampError> {
    let value = value.trim();
    if value.bytes().all(|b| b.is_ascii_digit()) {
        return parse_stamp(value);
    }
    DateTime::parse_from_rfc3339(value)
        .map(|dt| dt.with_timezone(&Utc))
        .map_err(|_| TimestampError::BadShape(value.to_string()))
}

/// Serde adapter storing instants as 14-digit stamps.
pub mod stamp_serde {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(dt: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_stamp(dt))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_stamp(&raw).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_full_stamp() {
        let dt = parse_stamp("20150424150304").unwrap();
        assert_eq!(format_iso(&dt), "2015-04-24T15:03:04Z");
    }

    #[test]
    fn pads_truncated_stamps() {
        assert_eq!(format_stamp(&parse_stamp("20150424").unwrap()), "20150424000000");
        assert_eq!(format_stamp(&parse_stamp("201504").unwrap()), "20150401000000");
        assert_eq!(format_stamp(&parse_stamp("2015").unwrap()), "20150101000000");
        assert_eq!(format_stamp(&parse_stamp("2015042415").unwrap()), "20150424150000");
    }

    #[test]
    fn rejects_bad_stamps() {
        assert!(matches!(parse_stamp("2015042"), Err(TimestampError::BadShape(_))));
        assert!(matches!(parse_stamp("2015x424"), Err(TimestampError::BadShape(_))));
        assert!(matches!(parse_stamp(""), Err(TimestampError::BadShape(_))));
        assert!(matches!(
            parse_stamp("20151324000000"),
            Err(TimestampError::OutOfRange(_))
        ));
        assert!(matches!(
            parse_stamp("20150230000000"),
            Err(TimestampError::OutOfRange(_))
        ));
    }

    #[test]
    fn http_dates() {
        let dt = parse_http_date("Fri, 24 Apr 2015 15:03:04 GMT").unwrap();
        assert_eq!(format_stamp(&dt), "20150424150304");
        assert_eq!(format_http_date(&dt), "Fri, 24 Apr 2015 15:03:04 GMT");
        assert!(parse_http_date("yesterday-ish").is_err());
    }

    #[test]
    fn day_forms() {
        let d = parse_day("2015-10-08").unwrap();
        assert_eq!(d, parse_day("20151008").unwrap());
        assert!(parse_day("Oct 8").is_err());
    }

    proptest! {
        #[test]
        fn stamp_round_trip(secs in 0i64..253_402_300_799) {
            let dt = DateTime::<Utc>::from_timestamp(secs, 0).unwrap();
            let stamp = format_stamp(&dt);
            prop_assert_eq!(stamp.len(), 14);
            let back = parse_stamp(&stamp).unwrap();
            prop_assert_eq!(back, dt);
            prop_assert_eq!(format_stamp(&back), stamp);
        }
    }
}
