//! Reading validation rules and ingest counters, shared by the HTTP
//! service and by tests that drive the pipeline in-process.

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::reading::{NoiseReading, MIN_WINDOW_SECONDS, NOISE_METRIC};
use crate::timeutil;

/// Sanity bounds for reported levels, wide enough for every supported
/// sensor range while rejecting unit mistakes.
pub const VALUE_RANGE_DBA: (f64, f64) = (0.0, 140.0);

/// Allowed clock skew before a window start counts as "from the future".
pub const FUTURE_SKEW_SECONDS: i64 = 60;

/// Why a reading was rejected. One code per violated rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCode {
    BadMetric,
    BadWindow,
    BadAlignment,
    BadValue,
    FutureTimestamp,
}

impl RejectCode {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectCode::BadMetric => "bad_metric",
            RejectCode::BadWindow => "bad_window",
            RejectCode::BadAlignment => "bad_alignment",
            RejectCode::BadValue => "bad_value",
            RejectCode::FutureTimestamp => "future_timestamp",
        }
    }
}

/// Accept a reading iff it carries the noise metric, respects the
/// privacy floor, maps into exactly one 5-minute bucket, is aligned to
/// its window length, carries a sane value, and does not claim a window
/// start more than the skew allowance into the future.
///
/// Rules are checked in a fixed order so a multiply-invalid reading
/// rejects deterministically.
pub fn validate_reading(reading: &NoiseReading, now: DateTime<Utc>) -> Result<(), RejectCode> {
    if reading.metric != NOISE_METRIC {
        return Err(RejectCode::BadMetric);
    }
    // The upper constraint keeps every reading inside a single 5-minute
    // rollup bucket: the window length must divide 300.
    if reading.window_seconds < MIN_WINDOW_SECONDS || 300 % reading.window_seconds != 0 {
        return Err(RejectCode::BadWindow);
    }
    if !timeutil::is_window_aligned(reading.window_start, reading.window_seconds) {
        return Err(RejectCode::BadAlignment);
    }
    if !reading.value.is_finite()
        || reading.value < VALUE_RANGE_DBA.0
        || reading.value > VALUE_RANGE_DBA.1
        || reading.sample_count < 1
    {
        return Err(RejectCode::BadValue);
    }
    if reading.window_start.timestamp() > now.timestamp() + FUTURE_SKEW_SECONDS {
        return Err(RejectCode::FutureTimestamp);
    }
    Ok(())
}

/// Monotone service-lifetime counters.
///
/// `accepted + duplicates + rejected` equals the total number of
/// readings ever received. `late` counts accepted readings that arrived
/// out of order (window start older than the school's high-water mark) —
/// the ones that force rollup re-aggregation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub accepted: u64,
    pub duplicates: u64,
    pub rejected: u64,
    pub late: u64,
}

impl IngestStats {
    pub fn total_received(&self) -> u64 {
        self.accepted + self.duplicates + self.rejected
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2019, 3, 11, 12, 0, 0).unwrap()
    }

    fn reading(h: u32, m: u32, s: u32) -> NoiseReading {
        NoiseReading {
            node_id: "n".into(),
            school_id: "s".into(),
            room_id: "r".into(),
            window_start: Utc.with_ymd_and_hms(2019, 3, 11, h, m, s).unwrap(),
            window_seconds: 300,
            metric: NOISE_METRIC.into(),
            value: 65.0,
            sample_count: 300,
        }
    }

    #[test]
    fn well_formed_reading_is_accepted() {
        assert_eq!(validate_reading(&reading(8, 5, 0), now()), Ok(()));
    }

    #[test]
    fn privacy_floor_rejects_short_windows() {
        let mut r = reading(8, 5, 0);
        r.window_seconds = 10;
        assert_eq!(validate_reading(&r, now()), Err(RejectCode::BadWindow));
        // Windows that straddle 5-minute buckets are rejected too.
        r.window_seconds = 600;
        assert_eq!(validate_reading(&r, now()), Err(RejectCode::BadWindow));
        r.window_seconds = 60;
        r.window_start = Utc.with_ymd_and_hms(2019, 3, 11, 8, 7, 0).unwrap();
        assert_eq!(validate_reading(&r, now()), Ok(()));
    }

    #[test]
    fn misaligned_start_is_rejected() {
        // 12:03 is not a multiple of 5 minutes from midnight.
        assert_eq!(
            validate_reading(&reading(12, 3, 0), now()),
            Err(RejectCode::BadAlignment)
        );
        assert_eq!(
            validate_reading(&reading(12, 0, 30), now()),
            Err(RejectCode::BadAlignment)
        );
    }

    #[test]
    fn value_and_count_sanity() {
        let mut r = reading(8, 5, 0);
        r.value = 150.0;
        assert_eq!(validate_reading(&r, now()), Err(RejectCode::BadValue));
        r.value = -1.0;
        assert_eq!(validate_reading(&r, now()), Err(RejectCode::BadValue));
        r.value = f64::NAN;
        assert_eq!(validate_reading(&r, now()), Err(RejectCode::BadValue));
        r.value = 65.0;
        r.sample_count = 0;
        assert_eq!(validate_reading(&r, now()), Err(RejectCode::BadValue));
    }

    #[test]
    fn future_window_start_is_rejected_beyond_skew() {
        // 60 s of skew is allowed.
        let mut r = reading(12, 1, 0);
        r.window_seconds = 60;
        assert_eq!(validate_reading(&r, now()), Ok(()));
        assert_eq!(
            validate_reading(&reading(12, 5, 0), now()),
            Err(RejectCode::FutureTimestamp)
        );
    }

    #[test]
    fn wrong_metric_is_rejected_first() {
        let mut r = reading(12, 3, 0);
        r.metric = "temperature_c".into();
        assert_eq!(validate_reading(&r, now()), Err(RejectCode::BadMetric));
    }

    #[test]
    fn codes_serialize_snake_case() {
        assert_eq!(RejectCode::BadAlignment.as_str(), "bad_alignment");
        assert_eq!(
            serde_json::to_string(&RejectCode::FutureTimestamp).unwrap(),
            "\"future_timestamp\""
        );
    }
}
