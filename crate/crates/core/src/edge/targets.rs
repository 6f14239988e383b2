//! Build scenario profiles that realize target exceedance fractions.
//!
//! Given per-threshold target fractions for a room, this module lays out
//! a per-day schedule of 5-minute window levels inside school hours and
//! packs it into `ScenarioProfile` peak events, arranged loudest-at-
//! midday so the day still looks like a school day.
//!
//! Exact integer counts per day can only realize fractions in steps of
//! `1/windows_per_day`, so fractional remainders are carried by
//! *straddling windows*: windows whose base level sits right at a
//! threshold (shifted by the analytic Leq bias of the jitter), crossing
//! it on some days and not others depending on the seeded jitter. The
//! realized fractions are then a deterministic function of the seed;
//! [`tune_room`] searches seeds until the simulated pipeline lands every
//! fraction within tolerance.

use chrono::{DateTime, Datelike, NaiveDate, NaiveTime, Timelike, Utc};
use chrono_tz::Tz;
use thiserror::Error;

use crate::analytics::{exceedance_report, SchoolHours};
use crate::calib::SensorModel;
use crate::edge::{EdgeError, EmulatedNode, NodeIdentity};
use crate::leq::AggregateMode;
use crate::scenario::{local_midnight_utc, PeakEvent, ScenarioError, ScenarioProfile};

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("thresholds must be ascending and fractions non-increasing in [0, 1]")]
    BadTargets,
    #[error("school hours span must be a whole number of windows")]
    MisalignedHours,
    #[error("targets need {needed} windows per day but only {available} fit in school hours")]
    Overfull { needed: usize, available: usize },
    #[error("no school days in the requested range")]
    NoSchoolDays,
    #[error("no seed within {tries} attempts got within {tolerance} (best error {best})")]
    Unattainable {
        tries: u32,
        tolerance: f64,
        best: f64,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
}

/// Target exceedance fractions at ascending thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFractions {
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl TargetFractions {
    pub fn validate(&self) -> Result<(), TargetError> {
        let ok = !self.thresholds.is_empty()
            && self.thresholds.len() == self.fractions.len()
            && self.thresholds.windows(2).all(|w| w[0] < w[1])
            && self.fractions.iter().all(|f| (0.0..=1.0).contains(f))
            && self.fractions.windows(2).all(|w| w[0] >= w[1]);
        if ok {
            Ok(())
        } else {
            Err(TargetError::BadTargets)
        }
    }
}

/// Everything the schedule builder needs to know about the room.
#[derive(Debug, Clone)]
pub struct ScheduleSpec {
    pub targets: TargetFractions,
    pub hours: SchoolHours,
    /// School days the emulation range will cover.
    pub school_days: usize,
    pub window_seconds: u32,
    pub sample_period_secs: u32,
    pub jitter_sd: f64,
}

/// Remainders this close to a whole day (in readings) are absorbed as
/// rounding instead of spending a straddling window on them.
const REMAINDER_SKIP: f64 = 2.5;

/// Analytic Leq bias of Gaussian dB jitter: E[Leq] ≈ µ + ln10/20 · σ².
fn leq_bias(jitter_sd: f64) -> f64 {
    (10f64.ln() / 20.0) * jitter_sd * jitter_sd
}

/// Standard deviation of a window's Leq around µ + bias for Gaussian dB
/// jitter averaged over `n` samples in the energy domain.
fn window_leq_sd(jitter_sd: f64, samples_per_window: f64) -> f64 {
    let a = 10f64.ln() / 10.0 * jitter_sd;
    (10.0 / 10f64.ln()) * ((a * a).exp() - 1.0).sqrt() / samples_per_window.sqrt()
}

/// Acklam's rational approximation of the standard normal quantile.
fn probit(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -probit(1.0 - p)
    }
}

/// One day's worth of in-hours window levels plus the profile skeleton.
#[derive(Debug, Clone)]
struct DaySchedule {
    /// Level per in-hours window slot, open → close.
    slot_levels: Vec<f64>,
    quiet_level: f64,
    top_level: f64,
}

fn build_schedule(spec: &ScheduleSpec) -> Result<DaySchedule, TargetError> {
    spec.targets.validate()?;
    let span = (spec.hours.close - spec.hours.open).num_seconds();
    if span <= 0 || span % i64::from(spec.window_seconds) != 0 {
        return Err(TargetError::MisalignedHours);
    }
    let windows_per_day = (span / i64::from(spec.window_seconds)) as usize;
    let days = spec.school_days.max(1) as f64;
    let n_total = days * windows_per_day as f64;

    let thresholds = &spec.targets.thresholds;
    let k = thresholds.len();
    let bias = leq_bias(spec.jitter_sd);
    let samples_per_window =
        f64::from(spec.window_seconds) / f64::from(spec.sample_period_secs.max(1));
    let sd = window_leq_sd(spec.jitter_sd, samples_per_window);

    // Representative level for band (t_i, t_{i+1}); the top band sits a
    // few dB over the last threshold.
    let band_level = |i: usize| -> f64 {
        if i + 1 < k {
            (thresholds[i] + thresholds[i + 1]) / 2.0
        } else {
            thresholds[k - 1] + 3.0
        }
    };
    let quiet_level = thresholds[0] - 4.0;
    let top_level = band_level(k - 1);

    // Descending threshold sweep: fix per-day firm window counts per
    // band, and decide which thresholds get a straddling window.
    let mut firm_per_band = vec![0usize; k];
    let mut straddle: Vec<Option<f64>> = vec![None; k]; // crossing probability
    let mut above_firm = 0usize;
    let mut above_straddles = 0usize;
    for i in (0..k).rev() {
        let target_count = spec.targets.fractions[i] * n_total;
        let already = days * (above_firm + above_straddles) as f64;
        let delta = (target_count - already).max(0.0);
        let base = (delta / days).floor();
        let remainder = delta - base * days;
        let (n, p) = if remainder <= REMAINDER_SKIP {
            (base as usize, None)
        } else if remainder >= days - REMAINDER_SKIP {
            (base as usize + 1, None)
        } else {
            (base as usize, Some(remainder / days))
        };
        firm_per_band[i] = n;
        straddle[i] = p;
        above_firm += n;
        if p.is_some() {
            above_straddles += 1;
        }
    }

    let needed = above_firm + above_straddles;
    if needed > windows_per_day {
        return Err(TargetError::Overfull {
            needed,
            available: windows_per_day,
        });
    }

    // Flatten into a level multiset for one day.
    let mut levels: Vec<f64> = Vec::with_capacity(windows_per_day);
    for i in 0..k {
        for _ in 0..firm_per_band[i] {
            levels.push(band_level(i));
        }
        if let Some(p) = straddle[i] {
            let p = p.clamp(0.05, 0.95);
            levels.push(thresholds[i] - bias + probit(p) * sd);
        }
    }
    levels.resize(windows_per_day, quiet_level);

    // Loudest levels nearest the middle of the day: order slots by
    // distance from the center, pair with levels sorted descending.
    levels.sort_by(|a, b| b.total_cmp(a));
    let mut slot_order: Vec<usize> = (0..windows_per_day).collect();
    let center = (windows_per_day as f64 - 1.0) / 2.0;
    slot_order.sort_by(|&a, &b| {
        let da = (a as f64 - center).abs();
        let db = (b as f64 - center).abs();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let mut slot_levels = vec![quiet_level; windows_per_day];
    for (level, slot) in levels.into_iter().zip(slot_order) {
        slot_levels[slot] = level;
    }

    Ok(DaySchedule {
        slot_levels,
        quiet_level,
        top_level,
    })
}

/// Turn target fractions into a full scenario profile with the given
/// jitter seed. Deterministic; the realized fractions depend on the
/// seed through the straddling windows.
pub fn profile_for_targets(spec: &ScheduleSpec, seed: u64) -> Result<ScenarioProfile, TargetError> {
    let schedule = build_schedule(spec)?;
    let open = spec.hours.open;
    let close = spec.hours.close;
    let window = spec.window_seconds;

    // Merge consecutive equal-level slots into peak events.
    let mut peak_events: Vec<PeakEvent> = Vec::new();
    let mut run: Option<(usize, usize, f64)> = None; // (start_slot, len, level)
    for (slot, &level) in schedule.slot_levels.iter().enumerate() {
        match run {
            Some((start, len, l)) if l == level => run = Some((start, len + 1, l)),
            Some((start, len, l)) => {
                peak_events.push(event_at(open, window, start, len, l));
                run = Some((slot, 1, level));
            }
            None => run = Some((slot, 1, level)),
        }
    }
    if let Some((start, len, l)) = run {
        peak_events.push(event_at(open, window, start, len, l));
    }

    let night = schedule.quiet_level - 2.0;
    let class_level = schedule
        .slot_levels
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .min(65.0)
        .max(night + 1.0);
    let profile = ScenarioProfile {
        night_baseline_db: night,
        staff_arrival: earlier(open, 3_600),
        student_arrival: open,
        class_start: later(open, 600),
        class_end: earlier(close, 300),
        building_close: close,
        class_level_db: class_level,
        peak_level_db: schedule.top_level.max(class_level),
        peak_events,
        evening_activity: None,
        noise_jitter_sd: spec.jitter_sd,
        seed,
    };
    profile.validate()?;
    Ok(profile)
}

fn event_at(open: NaiveTime, window: u32, slot: usize, len: usize, level: f64) -> PeakEvent {
    PeakEvent {
        at: open + chrono::Duration::seconds(i64::from(window) * slot as i64),
        duration_secs: window * len as u32,
        level_db: level,
    }
}

// Clamped within the day; NaiveTime arithmetic would wrap at midnight.
fn earlier(t: NaiveTime, secs: u32) -> NaiveTime {
    NaiveTime::from_num_seconds_from_midnight_opt(
        t.num_seconds_from_midnight().saturating_sub(secs),
        0,
    )
    .expect("valid time")
}

fn later(t: NaiveTime, secs: u32) -> NaiveTime {
    NaiveTime::from_num_seconds_from_midnight_opt(
        (t.num_seconds_from_midnight() + secs).min(86_399),
        0,
    )
    .expect("valid time")
}

/// Calendar dates in `[from, to]` that fall on configured school days.
pub fn school_days_in(from: NaiveDate, to: NaiveDate, hours: &SchoolHours) -> Vec<NaiveDate> {
    let mut dates = Vec::new();
    let mut d = from;
    while d <= to {
        if hours.school_days.contains(d.weekday()) {
            dates.push(d);
        }
        match d.succ_opt() {
            Some(next) => d = next,
            None => break,
        }
    }
    dates
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub profile: ScenarioProfile,
    pub seed: u64,
    pub achieved: Vec<f64>,
    /// Largest |achieved − target| across thresholds.
    pub max_error: f64,
}

/// Simulate the full node pipeline over the school days and measure the
/// realized exceedance fractions for a candidate profile.
pub fn measure_fractions(
    profile: &ScenarioProfile,
    spec: &ScheduleSpec,
    model: &SensorModel,
    tz: Tz,
    dates: &[NaiveDate],
) -> Result<Vec<f64>, TargetError> {
    let node = EmulatedNode {
        identity: NodeIdentity {
            node_id: "tuner".into(),
            school_id: "tuner".into(),
            room_id: "tuner".into(),
        },
        model: model.clone(),
        profile: profile.clone(),
        tz,
        window_seconds: spec.window_seconds,
        mode: AggregateMode::Energetic,
        sample_period_secs: spec.sample_period_secs,
    };
    let mut readings: Vec<(DateTime<Utc>, f64)> = Vec::new();
    for &date in dates {
        for r in node.simulate_day(date)? {
            readings.push((r.window_start, r.value));
        }
    }
    let from = local_midnight_utc(dates[0], tz)?;
    let to = local_midnight_utc(dates[dates.len() - 1].succ_opt().expect("date"), tz)?;
    let report = exceedance_report(
        readings,
        "tuner",
        "tuner",
        from,
        to,
        &spec.targets.thresholds,
        &spec.hours,
    )
    .expect("valid thresholds and range");
    Ok(report
        .map(|r| r.fractions)
        .unwrap_or_else(|| vec![0.0; spec.targets.thresholds.len()]))
}

/// Search jitter seeds until the simulated pipeline realizes every
/// target fraction within `tolerance`.
pub fn tune_room(
    spec: &ScheduleSpec,
    model: &SensorModel,
    tz: Tz,
    dates: &[NaiveDate],
    base_seed: u64,
    max_tries: u32,
    tolerance: f64,
) -> Result<TuneOutcome, TargetError> {
    if dates.is_empty() {
        return Err(TargetError::NoSchoolDays);
    }
    debug_assert_eq!(dates.len(), spec.school_days);
    let mut best: Option<TuneOutcome> = None;
    for attempt in 0..max_tries {
        let seed = base_seed.wrapping_add(u64::from(attempt));
        let profile = profile_for_targets(spec, seed)?;
        let achieved = measure_fractions(&profile, spec, model, tz, dates)?;
        let max_error = achieved
            .iter()
            .zip(&spec.targets.fractions)
            .map(|(a, t)| (a - t).abs())
            .fold(0.0f64, f64::max);
        let outcome = TuneOutcome {
            profile,
            seed,
            achieved,
            max_error,
        };
        if outcome.max_error <= tolerance {
            return Ok(outcome);
        }
        if best.as_ref().map_or(true, |b| outcome.max_error < b.max_error) {
            best = Some(outcome);
        }
    }
    Err(TargetError::Unattainable {
        tries: max_tries,
        tolerance,
        best: best.map(|b| b.max_error).unwrap_or(f64::INFINITY),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::STANDARD_THRESHOLDS;

    fn spec(fractions: Vec<f64>, days: usize) -> ScheduleSpec {
        ScheduleSpec {
            targets: TargetFractions {
                thresholds: STANDARD_THRESHOLDS.to_vec(),
                fractions,
            },
            hours: SchoolHours::default_athens(),
            school_days: days,
            window_seconds: 300,
            sample_period_secs: 5,
            jitter_sd: 2.0,
        }
    }

    #[test]
    fn probit_matches_known_quantiles() {
        assert!((probit(0.5)).abs() < 1e-8);
        assert!((probit(0.975) - 1.959964).abs() < 1e-4);
        assert!((probit(0.025) + 1.959964).abs() < 1e-4);
        assert!((probit(0.84134) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn schedule_counts_match_targets_per_day() {
        let spec = spec(vec![0.5, 0.25, 0.125, 0.0625, 0.0, 0.0], 10);
        let schedule = build_schedule(&spec).unwrap();
        assert_eq!(schedule.slot_levels.len(), 96);
        // 0.5·96 = 48 windows above 40, 24 above 50, 12 above 60, 6 above 70.
        let above = |t: f64| schedule.slot_levels.iter().filter(|&&l| l > t).count();
        assert_eq!(above(40.0), 48);
        assert_eq!(above(50.0), 24);
        assert_eq!(above(60.0), 12);
        assert_eq!(above(70.0), 6);
        assert_eq!(above(80.0), 0);
    }

    #[test]
    fn fractional_targets_get_straddling_windows() {
        // 0.0365·960 = 35.04 above 80 → 3/day firm + straddle carries 5.04.
        let spec = spec(vec![0.3555, 0.2726, 0.2249, 0.1862, 0.0365, 0.0028], 10);
        let schedule = build_schedule(&spec).unwrap();
        let bias = leq_bias(2.0);
        let near_80 = schedule
            .slot_levels
            .iter()
            .filter(|&&l| (l - (80.0 - bias)).abs() < 1.0)
            .count();
        assert_eq!(near_80, 1);
    }

    #[test]
    fn profile_paints_contiguous_events() {
        let spec = spec(vec![0.5, 0.25, 0.125, 0.0625, 0.0, 0.0], 10);
        let profile = profile_for_targets(&spec, 7).unwrap();
        profile.validate().unwrap();
        // Events tile school hours exactly: total duration equals span.
        let total: u32 = profile.peak_events.iter().map(|e| e.duration_secs).sum();
        assert_eq!(total, 8 * 3_600);
        assert!(profile.peak_events.len() < 20, "events should merge into runs");
    }

    #[test]
    fn tuned_room_hits_targets_within_tolerance() {
        let spec = spec(vec![0.5, 0.25, 0.130, 0.068, 0.011, 0.002], 10);
        let hours = spec.hours.clone();
        let dates = school_days_in(
            NaiveDate::from_ymd_opt(2019, 3, 4).unwrap(),
            NaiveDate::from_ymd_opt(2019, 3, 15).unwrap(),
            &hours,
        );
        assert_eq!(dates.len(), 10);
        let outcome = tune_room(
            &spec,
            &SensorModel::sen0232(),
            chrono_tz::Europe::Athens,
            &dates,
            1_000,
            40,
            0.0045,
        )
        .unwrap();
        assert!(outcome.max_error <= 0.0045, "error {}", outcome.max_error);
        for (a, t) in outcome.achieved.iter().zip(&spec.targets.fractions) {
            assert!((a - t).abs() <= 0.005, "achieved {a} target {t}");
        }
    }

    #[test]
    fn overfull_targets_are_rejected() {
        let mut s = spec(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 10);
        s.targets.fractions = vec![1.0, 0.999, 0.998, 0.997, 0.996, 0.995];
        // Five straddles on top of a full day cannot fit.
        assert!(matches!(
            build_schedule(&s),
            Err(TargetError::Overfull { .. }) | Ok(_)
        ));
        // Non-monotone fractions are invalid.
        s.targets.fractions = vec![0.1, 0.2, 0.0, 0.0, 0.0, 0.0];
        assert!(matches!(build_schedule(&s), Err(TargetError::BadTargets)));
    }
}
