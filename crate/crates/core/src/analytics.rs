//! Headline analytics: threshold-exceedance reports over school hours,
//! daily 24-hour profiles, exposure minutes, activity-bounds detection,
//! and guideline assessments, plus their CSV export shapes.

use std::collections::HashMap;
use std::fmt;

use chrono::{DateTime, Datelike, NaiveDate, NaiveTime, TimeZone, Utc, Weekday};
use chrono_tz::Tz;
use thiserror::Error;

use crate::timeutil;

/// 5-minute slots in a daily profile.
pub const SLOTS_PER_DAY: usize = 288;
/// Slot length backing profiles and exceedance readings.
pub const SLOT_SECONDS: u32 = 300;
/// Activity detection ignores runs at or after this local time; evening
/// community use of the building must not stretch the school day.
pub const ACTIVITY_CUTOFF_SLOT: usize = 216; // 18:00 local
/// Default rise over the night baseline that marks school activity.
pub const DEFAULT_RISE_DB: f64 = 10.0;
/// The six standard report thresholds, dBA.
pub const STANDARD_THRESHOLDS: [f64; 6] = [40.0, 50.0, 60.0, 70.0, 80.0, 85.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("thresholds must be non-empty, finite and strictly ascending")]
    BadThresholds,
    #[error("time range start must precede end")]
    BadRange,
    #[error("report is missing required threshold {0} dBA")]
    MissingThreshold(f64),
    #[error("too few night slots to estimate a baseline ({present} present, need {needed})")]
    InsufficientBaseline { present: usize, needed: usize },
    #[error("CSV layout requires exactly the thresholds 40,50,60,70,80,85")]
    NonStandardThresholds,
}

/// Bitset over weekdays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeekdaySet(u8);

impl WeekdaySet {
    pub const WEEKDAYS: WeekdaySet = WeekdaySet(0b0001_1111);

    pub fn empty() -> Self {
        WeekdaySet(0)
    }

    pub fn with(mut self, day: Weekday) -> Self {
        self.0 |= 1 << day.num_days_from_monday();
        self
    }

    pub fn contains(self, day: Weekday) -> bool {
        self.0 & (1 << day.num_days_from_monday()) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Weekday> {
        (0..7u8)
            .filter(move |i| self.0 & (1 << i) != 0)
            .map(|i| match i {
                0 => Weekday::Mon,
                1 => Weekday::Tue,
                2 => Weekday::Wed,
                3 => Weekday::Thu,
                4 => Weekday::Fri,
                5 => Weekday::Sat,
                _ => Weekday::Sun,
            })
    }
}

impl Default for WeekdaySet {
    fn default() -> Self {
        WeekdaySet::WEEKDAYS
    }
}

impl serde::Serialize for WeekdaySet {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let names: Vec<&str> = self.iter().map(timeutil::weekday_name).collect();
        names.serialize(ser)
    }
}

impl<'de> serde::Deserialize<'de> for WeekdaySet {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(de)?;
        let mut set = WeekdaySet::empty();
        for name in names {
            set = set.with(timeutil::parse_weekday(&name).map_err(serde::de::Error::custom)?);
        }
        Ok(set)
    }
}

/// The daily window statistics are computed over, per school.
#[derive(Debug, Clone, PartialEq)]
pub struct SchoolHours {
    pub time_zone: Tz,
    pub open: NaiveTime,
    pub close: NaiveTime,
    pub school_days: WeekdaySet,
}

impl SchoolHours {
    pub fn new(time_zone: Tz, open: NaiveTime, close: NaiveTime) -> Self {
        Self {
            time_zone,
            open,
            close,
            school_days: WeekdaySet::default(),
        }
    }

    /// Default for schools without explicit configuration.
    pub fn default_athens() -> Self {
        Self::new(
            chrono_tz::Europe::Athens,
            NaiveTime::from_hms_opt(8, 0, 0).unwrap(),
            NaiveTime::from_hms_opt(16, 0, 0).unwrap(),
        )
    }

    /// Whether a UTC instant falls on a school day inside [open, close).
    pub fn contains_utc(&self, instant: DateTime<Utc>) -> bool {
        let local = instant.with_timezone(&self.time_zone);
        self.school_days.contains(local.weekday())
            && local.time() >= self.open
            && local.time() < self.close
    }

    pub fn span_minutes(&self) -> f64 {
        (self.close - self.open).num_seconds() as f64 / 60.0
    }

    /// `08:00-16:00` style label for report rows.
    pub fn time_period_label(&self) -> String {
        format!(
            "{}-{}",
            timeutil::format_hm(self.open),
            timeutil::format_hm(self.close)
        )
    }
}

/// Per-threshold fractions of in-hours readings strictly above each
/// level.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceReport {
    pub school_id: String,
    pub room_id: String,
    pub thresholds: Vec<f64>,
    /// Exact counts behind the fractions, same order as `thresholds`.
    pub counts_above: Vec<u64>,
    pub fractions: Vec<f64>,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
    pub sample_count: u64,
}

impl ExceedanceReport {
    pub fn fraction_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-9)
            .map(|i| self.fractions[i])
    }
}

fn check_thresholds(thresholds: &[f64]) -> Result<(), AnalyticsError> {
    if thresholds.is_empty()
        || thresholds.iter().any(|t| !t.is_finite())
        || thresholds.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(AnalyticsError::BadThresholds);
    }
    Ok(())
}

/// Count in-school-hours readings above each threshold.
///
/// A reading participates when its window start lies in `[from, to)`
/// and inside the school's open hours on a school day; the comparison is
/// strict (`value > threshold`). Returns `None` when no reading
/// qualifies — an explicitly empty report rather than a zero division.
pub fn exceedance_report(
    readings: impl IntoIterator<Item = (DateTime<Utc>, f64)>,
    school_id: &str,
    room_id: &str,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
    thresholds: &[f64],
    hours: &SchoolHours,
) -> Result<Option<ExceedanceReport>, AnalyticsError> {
    check_thresholds(thresholds)?;
    if from >= to {
        return Err(AnalyticsError::BadRange);
    }
    let mut counts = vec![0u64; thresholds.len()];
    let mut total = 0u64;
    for (window_start, value) in readings {
        if window_start < from || window_start >= to || !hours.contains_utc(window_start) {
            continue;
        }
        total += 1;
        for (i, &t) in thresholds.iter().enumerate() {
            if value > t {
                counts[i] += 1;
            }
        }
    }
    if total == 0 {
        return Ok(None);
    }
    let fractions = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(Some(ExceedanceReport {
        school_id: school_id.to_string(),
        room_id: room_id.to_string(),
        thresholds: thresholds.to_vec(),
        counts_above: counts,
        fractions,
        from,
        to,
        sample_count: total,
    }))
}

/// Exposure time per school day implied by an exceedance fraction.
pub fn minutes_above(fraction: f64, hours: &SchoolHours) -> f64 {
    fraction * hours.span_minutes()
}

/// One advisory finding from the guideline assessment.
#[derive(Debug, Clone, PartialEq)]
pub enum WhoFinding {
    /// Any time at all above 85 dBA.
    ExposureAbove85 { minutes_per_day: f64 },
    /// More than an hour per day above the 70 dBA child guideline.
    ChildGuidelineExceeded { minutes_per_day: f64 },
    /// The 40 dBA in-school guideline is exceeded at all.
    SchoolGuidelineExceeded { fraction: f64 },
}

impl WhoFinding {
    pub fn code(&self) -> &'static str {
        match self {
            WhoFinding::ExposureAbove85 { .. } => "exposure_above_85",
            WhoFinding::ChildGuidelineExceeded { .. } => "child_guideline_70",
            WhoFinding::SchoolGuidelineExceeded { .. } => "school_guideline_40",
        }
    }
}

impl fmt::Display for WhoFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WhoFinding::ExposureAbove85 { minutes_per_day } => write!(
                f,
                "85 dBA exposure present: {minutes_per_day:.2} min per school day"
            ),
            WhoFinding::ChildGuidelineExceeded { minutes_per_day } => write!(
                f,
                "above 70 dBA for {minutes_per_day:.2} min per school day (child guideline: 1 h)"
            ),
            WhoFinding::SchoolGuidelineExceeded { fraction } => write!(
                f,
                "40 dBA school guideline exceeded {:.2}% of school hours",
                fraction * 100.0
            ),
        }
    }
}

/// Apply the guideline rules to a report. The report must cover the 40,
/// 70 and 85 dBA thresholds.
pub fn who_assessment(
    report: &ExceedanceReport,
    hours: &SchoolHours,
) -> Result<Vec<WhoFinding>, AnalyticsError> {
    let f40 = report
        .fraction_at(40.0)
        .ok_or(AnalyticsError::MissingThreshold(40.0))?;
    let f70 = report
        .fraction_at(70.0)
        .ok_or(AnalyticsError::MissingThreshold(70.0))?;
    let f85 = report
        .fraction_at(85.0)
        .ok_or(AnalyticsError::MissingThreshold(85.0))?;

    let mut findings = Vec::new();
    let min85 = minutes_above(f85, hours);
    if min85 > 0.0 {
        findings.push(WhoFinding::ExposureAbove85 {
            minutes_per_day: min85,
        });
    }
    let min70 = minutes_above(f70, hours);
    if min70 >= 60.0 {
        findings.push(WhoFinding::ChildGuidelineExceeded {
            minutes_per_day: min70,
        });
    }
    if f40 > 0.0 {
        findings.push(WhoFinding::SchoolGuidelineExceeded { fraction: f40 });
    }
    Ok(findings)
}

/// One local day in 288 five-minute slots of optional Leq.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyProfile {
    pub school_id: String,
    /// Room id, or `ALL` for the school-wide average.
    pub room: String,
    pub date: NaiveDate,
    pub slots: Vec<Option<f64>>,
}

impl DailyProfile {
    pub fn slot_time(slot: usize) -> NaiveTime {
        NaiveTime::from_num_seconds_from_midnight_opt(slot as u32 * SLOT_SECONDS, 0)
            .expect("slot < 288")
    }

    pub fn present_slots(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}

/// Assemble a local-day profile from 5-minute buckets given as
/// `(bucket_start_epoch_seconds, leq)`. Slots with no bucket stay
/// absent; local times that do not exist on DST-transition days stay
/// absent too.
pub fn daily_profile(
    buckets: impl IntoIterator<Item = (i64, f64)>,
    school_id: &str,
    room: &str,
    date: NaiveDate,
    tz: Tz,
) -> DailyProfile {
    let by_start: HashMap<i64, f64> = buckets.into_iter().collect();
    let slots = (0..SLOTS_PER_DAY)
        .map(|slot| {
            let local = date.and_time(DailyProfile::slot_time(slot));
            tz.from_local_datetime(&local)
                .earliest()
                .map(|dt| dt.with_timezone(&Utc).timestamp())
                .and_then(|ts| by_start.get(&ts).copied())
        })
        .collect();
    DailyProfile {
        school_id: school_id.to_string(),
        room: room.to_string(),
        date,
        slots,
    }
}

/// Detected start/end of school activity, as slot indices into the
/// profile (each slot is 5 minutes; slot `96` starts at 08:00 local).
///
/// The night baseline is the median of the 00:00–05:00 slots; activity
/// is any run of at least three consecutive slots exceeding
/// `baseline + rise_db` before the 18:00 cutoff. Returns `None` when no
/// qualifying run exists.
pub fn detect_activity_bounds(
    profile: &DailyProfile,
    rise_db: f64,
) -> Result<Option<(usize, usize)>, AnalyticsError> {
    const NIGHT_SLOTS: usize = 60; // 00:00..05:00
    const MIN_NIGHT_PRESENT: usize = 36; // three hours of data
    const MIN_RUN: usize = 3;

    let mut night: Vec<f64> = profile.slots[..NIGHT_SLOTS]
        .iter()
        .flatten()
        .copied()
        .collect();
    if night.len() < MIN_NIGHT_PRESENT {
        return Err(AnalyticsError::InsufficientBaseline {
            present: night.len(),
            needed: MIN_NIGHT_PRESENT,
        });
    }
    night.sort_by(|a, b| a.total_cmp(b));
    let baseline = if night.len() % 2 == 1 {
        night[night.len() / 2]
    } else {
        (night[night.len() / 2 - 1] + night[night.len() / 2]) / 2.0
    };
    let threshold = baseline + rise_db;

    let mut bounds: Option<(usize, usize)> = None;
    let mut run_start: Option<usize> = None;
    for slot in 0..=ACTIVITY_CUTOFF_SLOT {
        let active = slot < ACTIVITY_CUTOFF_SLOT
            && matches!(profile.slots[slot], Some(v) if v > threshold);
        match (active, run_start) {
            (true, None) => run_start = Some(slot),
            (false, Some(start)) => {
                if slot - start >= MIN_RUN {
                    let run = (start, slot - 1);
                    bounds = Some(match bounds {
                        None => run,
                        Some((first, _)) => (first, run.1),
                    });
                }
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(bounds)
}

/// Exceedance CSV in the standard-threshold layout, percentages with two
/// decimals. Header:
/// `school,room,pct_gt_40,pct_gt_50,pct_gt_60,pct_gt_70,pct_gt_80,pct_gt_85,time_period`.
pub fn write_exceedance_csv(
    rows: &[(&ExceedanceReport, &SchoolHours)],
) -> Result<String, AnalyticsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = std::iter::once("school".to_string())
        .chain(std::iter::once("room".to_string()))
        .chain(
            STANDARD_THRESHOLDS
                .iter()
                .map(|t| format!("pct_gt_{}", *t as i64)),
        )
        .chain(std::iter::once("time_period".to_string()))
        .collect();
    w.write_record(&header).expect("csv write");
    for (report, hours) in rows {
        if report.thresholds.len() != STANDARD_THRESHOLDS.len()
            || report
                .thresholds
                .iter()
                .zip(STANDARD_THRESHOLDS)
                .any(|(&a, b)| (a - b).abs() > 1e-9)
        {
            return Err(AnalyticsError::NonStandardThresholds);
        }
        let mut record = vec![report.school_id.clone(), report.room_id.clone()];
        record.extend(report.fractions.iter().map(|f| format!("{:.2}", f * 100.0)));
        record.push(hours.time_period_label());
        w.write_record(&record).expect("csv write");
    }
    Ok(String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8"))
}

/// Plot-ready profile CSV: `slot_start_local,leq_dba`, one row per slot,
/// empty value for absent slots.
pub fn write_profile_csv(profile: &DailyProfile) -> String {
    let mut out = String::from("slot_start_local,leq_dba\n");
    for (slot, value) in profile.slots.iter().enumerate() {
        let t = DailyProfile::slot_time(slot);
        match value {
            Some(v) => out.push_str(&format!("{},{:.2}\n", timeutil::format_hm(t), v)),
            None => out.push_str(&format!("{},\n", timeutil::format_hm(t))),
        }
    }
    out
}

/// Findings CSV: `school,room,code,detail`, one row per finding.
pub fn write_who_csv(rows: &[(String, String, Vec<WhoFinding>)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["school", "room", "code", "detail"])
        .expect("csv write");
    for (school, room, findings) in rows {
        for finding in findings {
            w.write_record([school, room, finding.code(), &finding.to_string()])
                .expect("csv write");
        }
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
}
