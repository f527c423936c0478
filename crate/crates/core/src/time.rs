//! Integer-minute timestamps.
//!
//! All times are minutes since a dataset-local epoch. Inputs may also be
//! ISO-8601 strings, which are converted to minutes since 1970-01-01T00:00Z.

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::{Error, Result};

pub type Minutes = i64;

pub const MINUTES_PER_HOUR: i64 = 60;

pub const fn hours(h: i64) -> Minutes {
    h * MINUTES_PER_HOUR
}

pub fn to_hours(m: Minutes) -> f64 {
    m as f64 / MINUTES_PER_HOUR as f64
}

/// Rounds fractional hours to the nearest minute.
pub fn from_hours_f64(h: f64) -> Minutes {
    (h * MINUTES_PER_HOUR as f64).round() as Minutes
}

pub fn parse_timestamp(s: &str) -> Result<Minutes> {
    let s = s.trim();
    if let Ok(m) = s.parse::<i64>() {
        return Ok(m);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp().div_euclid(60));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp().div_euclid(60));
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        let dt = d.and_hms_opt(0, 0, 0).expect("midnight exists");
        return Ok(dt.and_utc().timestamp().div_euclid(60));
    }
    Err(Error::BadTimestamp(s.to_string()))
}

/// Serde adapters: timestamps serialize as integer minutes and deserialize
/// from either integers or ISO-8601 strings.
pub(crate) mod serde_minutes {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::{parse_timestamp, Minutes};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Float(f64),
        Text(String),
    }

    fn resolve<E: serde::de::Error>(raw: Raw) -> Result<Minutes, E> {
        match raw {
            Raw::Int(m) => Ok(m),
            Raw::Float(f) if f.fract() == 0.0 && f.is_finite() => Ok(f as i64),
            Raw::Float(f) => Err(E::custom(format!("non-integer minute timestamp {f}"))),
            Raw::Text(s) => parse_timestamp(&s).map_err(E::custom),
        }
    }

    pub fn serialize<S: Serializer>(m: &Minutes, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(*m)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Minutes, D::Error> {
        resolve(Raw::deserialize(d)?)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<Minutes>, s: S) -> Result<S::Ok, S::Error> {
            match m {
                Some(v) => s.serialize_some(v),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Minutes>, D::Error> {
            match Option::<Raw>::deserialize(d)? {
                None => Ok(None),
                Some(Raw::Text(s)) if s.trim().is_empty() => Ok(None),
                Some(raw) => resolve(raw).map(Some),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_and_iso_timestamps() {
        assert_eq!(parse_timestamp("125").unwrap(), 125);
        assert_eq!(parse_timestamp("1970-01-01T02:05:00Z").unwrap(), 125);
        assert_eq!(parse_timestamp("1970-01-01 02:05").unwrap(), 125);
        assert_eq!(parse_timestamp("1970-01-02").unwrap(), 1440);
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn hour_helpers() {
        assert_eq!(hours(48), 2880);
        assert_eq!(to_hours(90), 1.5);
        assert_eq!(from_hours_f64(1.51), 91);
    }
}
