//! Parametric school-day acoustic timeline for the node emulator.
//!
//! A profile describes one room's day as piecewise-constant base levels
//! (night → staff arrival → students → class → after-class → night, with
//! an optional evening activity), overridden by scheduled peak events,
//! plus seeded Gaussian jitter in dB. Generation is deterministic given
//! `(profile, date, sample period)`: the jitter stream is derived from
//! the profile seed and the calendar date.

use chrono::{DateTime, Datelike, NaiveDate, NaiveTime, TimeZone, Timelike, Utc};
use chrono_tz::Tz;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default zone for profile times-of-day.
pub const DEFAULT_TZ: Tz = chrono_tz::Europe::Athens;

/// Base-level rise over the night baseline while the building is only
/// partially occupied (staff before students, stragglers after class).
pub const PARTIAL_OCCUPANCY_RISE_DB: f64 = 8.0;

/// Longest allowed sampling period; the emulator samples at least once
/// every five seconds.
pub const MAX_SAMPLE_PERIOD_SECS: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("profile times must be ordered staff < students < class start < class end <= close")]
    UnorderedTimes,
    #[error("levels must satisfy night < class <= peak (got {night}, {class}, {peak})")]
    UnorderedLevels { night: f64, class: f64, peak: f64 },
    #[error("noise jitter sd must be finite and >= 0, got {0}")]
    BadJitter(f64),
    #[error("sample period must be 1..={MAX_SAMPLE_PERIOD_SECS} seconds, got {0}")]
    BadSamplePeriod(u32),
    #[error("local midnight does not exist in zone {0} on {1}")]
    BadLocalMidnight(Tz, NaiveDate),
    #[error("peak event at {at} has zero duration")]
    EmptyPeakEvent { at: NaiveTime },
}

/// A scheduled override of the base level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEvent {
    #[serde(with = "crate::timeutil::hm_time")]
    pub at: NaiveTime,
    pub duration_secs: u32,
    pub level_db: f64,
}

/// After-hours use of the building by third parties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EveningActivity {
    #[serde(with = "crate::timeutil::hm_time")]
    pub start: NaiveTime,
    #[serde(with = "crate::timeutil::hm_time")]
    pub end: NaiveTime,
    pub level_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProfile {
    pub night_baseline_db: f64,
    #[serde(with = "crate::timeutil::hm_time")]
    pub staff_arrival: NaiveTime,
    #[serde(with = "crate::timeutil::hm_time")]
    pub student_arrival: NaiveTime,
    #[serde(with = "crate::timeutil::hm_time")]
    pub class_start: NaiveTime,
    #[serde(with = "crate::timeutil::hm_time")]
    pub class_end: NaiveTime,
    #[serde(with = "crate::timeutil::hm_time")]
    pub building_close: NaiveTime,
    pub class_level_db: f64,
    pub peak_level_db: f64,
    #[serde(default)]
    pub peak_events: Vec<PeakEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evening_activity: Option<EveningActivity>,
    pub noise_jitter_sd: f64,
    pub seed: u64,
}

impl ScenarioProfile {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let ordered = self.staff_arrival < self.student_arrival
            && self.student_arrival < self.class_start
            && self.class_start < self.class_end
            && self.class_end <= self.building_close;
        if !ordered {
            return Err(ScenarioError::UnorderedTimes);
        }
        if !(self.night_baseline_db < self.class_level_db
            && self.class_level_db <= self.peak_level_db)
        {
            return Err(ScenarioError::UnorderedLevels {
                night: self.night_baseline_db,
                class: self.class_level_db,
                peak: self.peak_level_db,
            });
        }
        if !self.noise_jitter_sd.is_finite() || self.noise_jitter_sd < 0.0 {
            return Err(ScenarioError::BadJitter(self.noise_jitter_sd));
        }
        for ev in &self.peak_events {
            if ev.duration_secs == 0 {
                return Err(ScenarioError::EmptyPeakEvent { at: ev.at });
            }
        }
        Ok(())
    }

    /// Level while the building is partially occupied, capped at the
    /// class level.
    pub fn partial_occupancy_db(&self) -> f64 {
        (self.night_baseline_db + PARTIAL_OCCUPANCY_RISE_DB).min(self.class_level_db)
    }

    /// Base level (before jitter) at a local time of day. Peak events
    /// take precedence in list order, then the evening activity window,
    /// then the daily segments.
    pub fn base_level(&self, t: NaiveTime) -> f64 {
        let sod = t.num_seconds_from_midnight();
        for ev in &self.peak_events {
            let start = ev.at.num_seconds_from_midnight();
            let end = start.saturating_add(ev.duration_secs);
            if sod >= start && sod < end {
                return ev.level_db;
            }
        }
        if let Some(evening) = &self.evening_activity {
            if t >= evening.start && t < evening.end {
                return evening.level_db;
            }
        }
        if t < self.staff_arrival {
            self.night_baseline_db
        } else if t < self.student_arrival {
            self.partial_occupancy_db()
        } else if t < self.class_end {
            // Arrival crowd is as loud as class time.
            self.class_level_db
        } else if t < self.building_close {
            self.partial_occupancy_db()
        } else {
            self.night_baseline_db
        }
    }

    /// Deterministic per-day jitter stream seed.
    pub fn day_seed(&self, date: NaiveDate) -> u64 {
        splitmix64(self.seed ^ (date.num_days_from_ce() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    /// Generate the true dBA sample stream for one local calendar day.
    ///
    /// Samples run from local midnight to the next local midnight at the
    /// given whole-second period, with timestamps in UTC. Deterministic
    /// for a given `(profile, date, period)`.
    pub fn generate(
        &self,
        date: NaiveDate,
        tz: Tz,
        sample_period_secs: u32,
    ) -> Result<DayStream, ScenarioError> {
        self.validate()?;
        if sample_period_secs == 0 || sample_period_secs > MAX_SAMPLE_PERIOD_SECS {
            return Err(ScenarioError::BadSamplePeriod(sample_period_secs));
        }
        let start = local_midnight_utc(date, tz)?;
        let end = local_midnight_utc(
            date.succ_opt()
                .ok_or(ScenarioError::BadLocalMidnight(tz, date))?,
            tz,
        )?;
        let rng = ChaCha8Rng::seed_from_u64(self.day_seed(date));
        Ok(DayStream {
            profile: self.clone(),
            tz,
            cursor: start.timestamp(),
            end: end.timestamp(),
            step: i64::from(sample_period_secs),
            normal: Normal::new(0.0, self.noise_jitter_sd.max(f64::MIN_POSITIVE))
                .expect("finite sd"),
            jitter_sd: self.noise_jitter_sd,
            rng,
        })
    }
}

/// Local midnight of a date, as a UTC instant.
pub fn local_midnight_utc(date: NaiveDate, tz: Tz) -> Result<DateTime<Utc>, ScenarioError> {
    tz.from_local_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"))
        .earliest()
        .map(|dt| dt.with_timezone(&Utc))
        .ok_or(ScenarioError::BadLocalMidnight(tz, date))
}

/// Iterator over one day of `(UTC instant, true dBA)` samples.
pub struct DayStream {
    profile: ScenarioProfile,
    tz: Tz,
    cursor: i64,
    end: i64,
    step: i64,
    normal: Normal<f64>,
    jitter_sd: f64,
    rng: ChaCha8Rng,
}

impl Iterator for DayStream {
    type Item = (DateTime<Utc>, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.end {
            return None;
        }
        let ts = crate::timeutil::from_epoch_seconds(self.cursor);
        self.cursor += self.step;
        let local_time = ts.with_timezone(&self.tz).time();
        let base = self.profile.base_level(local_time);
        let level = if self.jitter_sd > 0.0 {
            base + self.normal.sample(&mut self.rng)
        } else {
            base
        };
        Some((ts, level))
    }
}

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A representative school-day profile shared by tests across modules.
#[cfg(test)]
pub(crate) fn school_day_profile() -> ScenarioProfile {
    ScenarioProfile {
        night_baseline_db: 34.0,
        staff_arrival: NaiveTime::from_hms_opt(7, 0, 0).unwrap(),
        student_arrival: NaiveTime::from_hms_opt(8, 0, 0).unwrap(),
        class_start: NaiveTime::from_hms_opt(8, 10, 0).unwrap(),
        class_end: NaiveTime::from_hms_opt(14, 5, 0).unwrap(),
        building_close: NaiveTime::from_hms_opt(16, 0, 0).unwrap(),
        class_level_db: 65.0,
        peak_level_db: 80.0,
        peak_events: vec![],
        evening_activity: Some(EveningActivity {
            start: NaiveTime::from_hms_opt(18, 30, 0).unwrap(),
            end: NaiveTime::from_hms_opt(19, 50, 0).unwrap(),
            level_db: 42.0,
        }),
        noise_jitter_sd: 2.0,
        seed: 41,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn school_day_profile() -> ScenarioProfile {
        super::school_day_profile()
    }

    #[test]
    fn night_samples_stay_near_baseline() {
        let p = school_day_profile();
        let date = NaiveDate::from_ymd_opt(2019, 3, 11).unwrap();
        for (ts, level) in p.generate(date, DEFAULT_TZ, 1).unwrap() {
            let local = ts.with_timezone(&DEFAULT_TZ).time();
            if local == NaiveTime::from_hms_opt(3, 0, 0).unwrap() {
                assert!((level - p.night_baseline_db).abs() <= 3.0 * p.noise_jitter_sd + 1e-9);
            }
        }
    }

    #[test]
    fn midday_half_hour_averages_to_class_level() {
        let p = school_day_profile();
        let date = NaiveDate::from_ymd_opt(2019, 3, 11).unwrap();
        let from = NaiveTime::from_hms_opt(10, 0, 0).unwrap();
        let to = NaiveTime::from_hms_opt(10, 30, 0).unwrap();
        let vals: Vec<f64> = p
            .generate(date, DEFAULT_TZ, 1)
            .unwrap()
            .filter(|(ts, _)| {
                let t = ts.with_timezone(&DEFAULT_TZ).time();
                t >= from && t < to
            })
            .map(|(_, v)| v)
            .collect();
        assert_eq!(vals.len(), 1800);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 65.0).abs() < 0.5, "mean {mean}");
    }

    #[test]
    fn zero_jitter_is_exactly_the_segment_level() {
        let mut p = school_day_profile();
        p.noise_jitter_sd = 0.0;
        p.evening_activity = None;
        let date = NaiveDate::from_ymd_opt(2019, 3, 12).unwrap();
        let noon = p
            .generate(date, DEFAULT_TZ, 5)
            .unwrap()
            .find(|(ts, _)| ts.with_timezone(&DEFAULT_TZ).time().hour() == 12)
            .unwrap();
        assert_eq!(noon.1, 65.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = school_day_profile();
        let date = NaiveDate::from_ymd_opt(2019, 3, 13).unwrap();
        let a: Vec<_> = p.generate(date, DEFAULT_TZ, 1).unwrap().collect();
        let b: Vec<_> = p.generate(date, DEFAULT_TZ, 1).unwrap().collect();
        assert_eq!(a, b);
        let other: Vec<_> = p
            .generate(date.succ_opt().unwrap(), DEFAULT_TZ, 1)
            .unwrap()
            .collect();
        assert_ne!(
            a.iter().map(|(_, v)| *v).collect::<Vec<_>>(),
            other.iter().map(|(_, v)| *v).collect::<Vec<_>>()
        );
    }

    #[test]
    fn timestamps_cover_the_local_day_in_order() {
        let p = school_day_profile();
        let date = NaiveDate::from_ymd_opt(2019, 3, 11).unwrap();
        let ts: Vec<_> = p
            .generate(date, DEFAULT_TZ, 5)
            .unwrap()
            .map(|(t, _)| t)
            .collect();
        assert_eq!(ts.len(), 86400 / 5);
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
        // Athens is UTC+2 in March (before the DST switch).
        assert_eq!(crate::timeutil::format_utc(ts[0]), "2019-03-10T22:00:00Z");
    }

    #[test]
    fn peak_events_override_base() {
        let mut p = school_day_profile();
        p.noise_jitter_sd = 0.0;
        p.peak_events = vec![PeakEvent {
            at: NaiveTime::from_hms_opt(10, 0, 0).unwrap(),
            duration_secs: 300,
            level_db: 78.0,
        }];
        assert_eq!(
            p.base_level(NaiveTime::from_hms_opt(10, 2, 0).unwrap()),
            78.0
        );
        assert_eq!(
            p.base_level(NaiveTime::from_hms_opt(10, 5, 0).unwrap()),
            65.0
        );
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let mut p = school_day_profile();
        p.class_start = NaiveTime::from_hms_opt(7, 30, 0).unwrap();
        assert_eq!(p.validate(), Err(ScenarioError::UnorderedTimes));

        let mut p = school_day_profile();
        p.night_baseline_db = 70.0;
        assert!(matches!(
            p.validate(),
            Err(ScenarioError::UnorderedLevels { .. })
        ));

        let p = school_day_profile();
        assert_eq!(
            p.generate(NaiveDate::from_ymd_opt(2019, 3, 11).unwrap(), DEFAULT_TZ, 9)
                .err(),
            Some(ScenarioError::BadSamplePeriod(9))
        );
    }
}
