//! UTC instants at one-second resolution.

use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike, Utc};

pub const MINUTE: i64 = 60;
pub const HOUR: i64 = 3600;
pub const DAY: i64 = 86_400;
pub const WEEK: i64 = 7 * DAY;

/// Seconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn seconds(self) -> i64 {
        self.0
    }

    /// Start of the aligned bucket of `width` seconds containing this instant.
    pub fn floor_to(self, width: i64) -> Timestamp {
        Timestamp(self.0.div_euclid(width) * width)
    }

    pub fn is_aligned(self, width: i64) -> bool {
        self.0.rem_euclid(width) == 0
    }

    pub fn minute_of_day(self) -> u32 {
        (self.0.rem_euclid(DAY) / MINUTE) as u32
    }

    /// 0 = Monday .. 6 = Sunday.
    pub fn day_of_week(self) -> u32 {
        self.datetime().weekday().num_days_from_monday()
    }

    fn datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.0, 0).expect("timestamp within chrono range")
    }

    pub fn from_ymd_hms(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> Option<Timestamp> {
        let date = chrono::NaiveDate::from_ymd_opt(y, mo, d)?;
        let dt = date.and_hms_opt(h, mi, s)?;
        Some(Timestamp(dt.and_utc().timestamp()))
    }

    pub fn hour(self) -> u32 {
        self.datetime().hour()
    }
}

impl Add<i64> for Timestamp {
    type Output = Timestamp;
    fn add(self, secs: i64) -> Timestamp {
        Timestamp(self.0 + secs)
    }
}

impl Sub<i64> for Timestamp {
    type Output = Timestamp;
    fn sub(self, secs: i64) -> Timestamp {
        Timestamp(self.0 - secs)
    }
}

impl Sub for Timestamp {
    type Output = i64;
    fn sub(self, other: Timestamp) -> i64 {
        self.0 - other.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DateTime::from_timestamp(self.0, 0) {
            Some(dt) => write!(f, "{}", dt.format("%Y-%m-%dT%H:%M:%SZ")),
            None => write!(f, "@{}", self.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTimestampError(pub String);

impl fmt::Display for ParseTimestampError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "not an ISO-8601 timestamp: `{}`", self.0)
    }
}

impl std::error::Error for ParseTimestampError {}

impl FromStr for Timestamp {
    type Err = ParseTimestampError;

    /// Accepts RFC 3339 (`2017-03-07T14:32:00Z`, explicit offsets allowed) or a
    /// naive `YYYY-MM-DDTHH:MM:SS` / `YYYY-MM-DD HH:MM:SS`, read as UTC.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(Timestamp(dt.timestamp()));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(Timestamp(dt.and_utc().timestamp()));
            }
        }
        Err(ParseTimestampError(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_iso() {
        let t: Timestamp = "2017-03-07T14:32:00Z".parse().unwrap();
        assert_eq!(t.to_string(), "2017-03-07T14:32:00Z");
        assert_eq!(t.minute_of_day(), 14 * 60 + 32);
        // 2017-03-07 was a Tuesday
        assert_eq!(t.day_of_week(), 1);
    }

    #[test]
    fn accepts_offsets_and_naive() {
        let a: Timestamp = "2017-03-07T10:32:00-04:00".parse().unwrap();
        let b: Timestamp = "2017-03-07 14:32:00".parse().unwrap();
        assert_eq!(a, b);
        assert!("14:32".parse::<Timestamp>().is_err());
    }

    #[test]
    fn floor_handles_negative() {
        assert_eq!(Timestamp(-1).floor_to(HOUR), Timestamp(-3600));
        assert!(Timestamp(7200).is_aligned(HOUR));
    }
}
