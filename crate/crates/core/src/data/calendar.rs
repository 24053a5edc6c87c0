use chrono::{DateTime, Datelike, FixedOffset, NaiveDateTime, Timelike};

use crate::error::{Error, Result};
use crate::nn_core::TimeIndex;

const NAIVE_FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];

/// Parses `UTC`, `Z` or a fixed offset such as `+05:30`.
pub fn parse_timezone(s: &str) -> Result<FixedOffset> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("utc") || t == "Z" {
        return Ok(FixedOffset::east_opt(0).expect("zero offset"));
    }
    let bad = || Error::Config(format!("timezone `{s}`: expected UTC or a fixed offset like +05:30"));
    let (sign, rest) = match t.as_bytes().first() {
        Some(b'+') => (1, &t[1..]),
        Some(b'-') => (-1, &t[1..]),
        _ => return Err(bad()),
    };
    let (h, m) = match rest.split_once(':') {
        Some((h, m)) => (h, m),
        None if rest.len() == 4 => rest.split_at(2),
        None => (rest, "0"),
    };
    let h: i32 = h.parse().map_err(|_| bad())?;
    let m: i32 = m.parse().map_err(|_| bad())?;
    if h > 14 || m > 59 {
        return Err(bad());
    }
    FixedOffset::east_opt(sign * (h * 3600 + m * 60)).ok_or_else(bad)
}

/// Parses a timestamp into dataset-local time. Strings without an offset
/// are taken to be local already; strings with one are converted.
pub fn parse_timestamp(s: &str, tz: FixedOffset) -> Result<NaiveDateTime> {
    let t = s.trim();
    for f in NAIVE_FORMATS {
        if let Ok(v) = NaiveDateTime::parse_from_str(t, f) {
            return Ok(v);
        }
    }
    if let Ok(v) = DateTime::parse_from_rfc3339(t) {
        return Ok(v.with_timezone(&tz).naive_local());
    }
    if let Ok(d) = chrono::NaiveDate::parse_from_str(t, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight"));
    }
    Err(Error::Data(format!("unparseable timestamp `{s}`")))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// `(hour, day of week with Monday = 0, month)` of a local timestamp.
pub fn timestamp_features(t: &NaiveDateTime) -> TimeIndex {
    TimeIndex {
        hour: t.hour() as usize,
        dow: t.weekday().num_days_from_monday() as usize,
        month: t.month() as usize,
    }
}
