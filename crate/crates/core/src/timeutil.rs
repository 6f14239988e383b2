//! Shared time plumbing: the pinned RFC 3339 wire format, `HH:MM`
//! time-of-day (de)serialization for config files, and window alignment
//! checks against UTC midnight.

use chrono::{DateTime, NaiveTime, TimeZone, Utc, Weekday};

/// Seconds-resolution RFC 3339 in UTC, e.g. `2019-03-11T08:05:00Z`.
///
/// Readings are whole-second quantities; pinning the format keeps wire
/// payloads and exported files byte-reproducible.
pub mod rfc3339_utc {
    use super::*;
    use serde::{de::Error as DeError, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(dt: &DateTime<Utc>, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&format_utc(*dt))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(de)?;
        parse_utc(&s).map_err(D::Error::custom)
    }
}

pub fn format_utc(dt: DateTime<Utc>) -> String {
    dt.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_utc(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|dt| dt.with_timezone(&Utc))
        .map_err(|e| format!("invalid RFC 3339 timestamp {s:?}: {e}"))
}

/// `HH:MM` local time-of-day fields in config files.
pub mod hm_time {
    use super::*;
    use serde::{de::Error as DeError, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveTime, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&t.format("%H:%M").to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<NaiveTime, D::Error> {
        let s = String::deserialize(de)?;
        parse_hm(&s).map_err(D::Error::custom)
    }
}

/// Same as [`hm_time`] but for `Option<NaiveTime>`.
pub mod hm_time_opt {
    use super::*;
    use serde::{de::Error as DeError, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Option<NaiveTime>, ser: S) -> Result<S::Ok, S::Error> {
        match t {
            Some(t) => ser.serialize_some(&t.format("%H:%M").to_string()),
            None => ser.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Option<NaiveTime>, D::Error> {
        let s = Option::<String>::deserialize(de)?;
        s.map(|s| parse_hm(&s).map_err(D::Error::custom)).transpose()
    }
}

pub fn parse_hm(s: &str) -> Result<NaiveTime, String> {
    NaiveTime::parse_from_str(s, "%H:%M")
        .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M:%S"))
        .map_err(|e| format!("invalid time of day {s:?} (want HH:MM): {e}"))
}

pub fn format_hm(t: NaiveTime) -> String {
    t.format("%H:%M").to_string()
}

/// Whole seconds since the UNIX epoch; the epoch is a UTC midnight, so
/// for any window length dividing 86 400 this is also the offset from
/// the day's midnight.
pub fn epoch_seconds(dt: DateTime<Utc>) -> i64 {
    dt.timestamp()
}

pub fn from_epoch_seconds(ts: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(ts, 0).single().expect("valid timestamp")
}

/// A window start is aligned when it sits on a whole multiple of the
/// window length from midnight UTC (and carries no sub-second part).
pub fn is_window_aligned(start: DateTime<Utc>, window_seconds: u32) -> bool {
    window_seconds > 0
        && start.timestamp_subsec_nanos() == 0
        && start.timestamp().rem_euclid(i64::from(window_seconds)) == 0
}

pub fn floor_to(ts: i64, step: i64) -> i64 {
    ts - ts.rem_euclid(step)
}

pub fn parse_weekday(s: &str) -> Result<Weekday, String> {
    match s.to_ascii_lowercase().as_str() {
        "mon" | "monday" => Ok(Weekday::Mon),
        "tue" | "tuesday" => Ok(Weekday::Tue),
        "wed" | "wednesday" => Ok(Weekday::Wed),
        "thu" | "thursday" => Ok(Weekday::Thu),
        "fri" | "friday" => Ok(Weekday::Fri),
        "sat" | "saturday" => Ok(Weekday::Sat),
        "sun" | "sunday" => Ok(Weekday::Sun),
        other => Err(format!("unknown weekday {other:?}")),
    }
}

pub fn weekday_name(day: Weekday) -> &'static str {
    match day {
        Weekday::Mon => "mon",
        Weekday::Tue => "tue",
        Weekday::Wed => "wed",
        Weekday::Thu => "thu",
        Weekday::Fri => "fri",
        Weekday::Sat => "sat",
        Weekday::Sun => "sun",
    }
}
