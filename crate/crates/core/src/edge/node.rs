//! One emulated sensor node: scenario → raw units → calibrated dBA →
//! window aggregation → readings.

use chrono::{DateTime, NaiveDate, Utc};
use chrono_tz::Tz;
use thiserror::Error;

use crate::calib::{self, CalibError, SensorKind, SensorModel};
use crate::leq::{window_aggregate, AggregateMode};
use crate::reading::{NoiseReading, MIN_WINDOW_SECONDS, NOISE_METRIC};
use crate::scenario::{ScenarioError, ScenarioProfile};

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error("window must be at least {MIN_WINDOW_SECONDS} s and divide 300, got {0}")]
    BadWindow(u32),
}

/// A raw sensor sample. This type never leaves the node; it exists only
/// between the (emulated) ADC and the window aggregator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSample {
    pub timestamp: DateTime<Utc>,
    pub value: f64,
}

/// Invert `apply_calibration` for a model so the emulator can feed the
/// calibration path realistic raw units. The level must lie inside the
/// model's measuring range.
pub fn encode_raw(true_db: f64, model: &SensorModel) -> Result<f64, CalibError> {
    if !true_db.is_finite() {
        return Err(CalibError::NonFinite(true_db));
    }
    if true_db < model.range_min_dba || true_db > model.range_max_dba {
        return Err(CalibError::OutOfRange {
            level: true_db,
            min: model.range_min_dba,
            max: model.range_max_dba,
        });
    }
    match model.kind {
        SensorKind::Openjumper => {
            let p = model.electret.ok_or(CalibError::MissingParams {
                kind: model.kind,
                expected: "electret",
            })?;
            Ok(p.gain * p.sensitivity_v_per_pa * p.p_ref * 10f64.powf(true_db / 20.0))
        }
        SensorKind::Grove => {
            let cal = model.linear.ok_or(CalibError::MissingParams {
                kind: model.kind,
                expected: "linear",
            })?;
            Ok((true_db - cal.intercept) / cal.slope)
        }
        SensorKind::Sparkfun => match model.linear {
            Some(cal) => Ok((true_db - cal.intercept) / cal.slope),
            None => Ok(20.0 * 10f64.powf((true_db - 50.0) / 20.0)),
        },
        SensorKind::Sen0232 => Ok(true_db / calib::SEN0232_DB_PER_VOLT),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeIdentity {
    pub node_id: String,
    pub school_id: String,
    pub room_id: String,
}

/// A single emulated classroom node.
#[derive(Debug, Clone)]
pub struct EmulatedNode {
    pub identity: NodeIdentity,
    pub model: SensorModel,
    pub profile: ScenarioProfile,
    pub tz: Tz,
    pub window_seconds: u32,
    pub mode: AggregateMode,
    pub sample_period_secs: u32,
}

impl EmulatedNode {
    /// Run one local calendar day and return the readings the node would
    /// uplink, in window order. Deterministic.
    pub fn simulate_day(&self, date: NaiveDate) -> Result<Vec<NoiseReading>, EdgeError> {
        if self.window_seconds < MIN_WINDOW_SECONDS || 300 % self.window_seconds != 0 {
            return Err(EdgeError::BadWindow(self.window_seconds));
        }
        let window = i64::from(self.window_seconds);
        let mut readings = Vec::with_capacity((86_400 / window) as usize + 1);
        let mut current_window: Option<i64> = None;
        let mut samples: Vec<f64> = Vec::with_capacity(
            (self.window_seconds / self.sample_period_secs.max(1)) as usize + 1,
        );

        let flush =
            |window_start: i64, samples: &mut Vec<f64>, readings: &mut Vec<NoiseReading>| {
                if let Some(value) = window_aggregate(samples, self.mode) {
                    readings.push(NoiseReading {
                        node_id: self.identity.node_id.clone(),
                        school_id: self.identity.school_id.clone(),
                        room_id: self.identity.room_id.clone(),
                        window_start: crate::timeutil::from_epoch_seconds(window_start),
                        window_seconds: self.window_seconds,
                        metric: NOISE_METRIC.into(),
                        value,
                        sample_count: samples.len() as u32,
                    });
                }
                samples.clear();
            };

        for (ts, true_db) in self
            .profile
            .generate(date, self.tz, self.sample_period_secs)?
        {
            // A physical sensor can only report within its range; clamp
            // the scene level before inverting the calibration.
            let clamped = true_db.clamp(self.model.range_min_dba, self.model.range_max_dba);
            let raw = RawSample {
                timestamp: ts,
                value: encode_raw(clamped, &self.model)?,
            };
            let dba = calib::apply_calibration(&self.model, raw.value)?;

            let wstart = crate::timeutil::floor_to(ts.timestamp(), window);
            if current_window != Some(wstart) {
                if let Some(prev) = current_window {
                    flush(prev, &mut samples, &mut readings);
                }
                current_window = Some(wstart);
            }
            samples.push(dba);
        }
        if let Some(prev) = current_window {
            flush(prev, &mut samples, &mut readings);
        }
        Ok(readings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{ElectretParams, LinearCalibration, P_REF_PASCAL};
    use crate::scenario::DEFAULT_TZ;
    use chrono::NaiveTime;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_models() -> Vec<SensorModel> {
        vec![
            SensorModel::sen0232(),
            SensorModel::grove(
                LinearCalibration::new(0.12, 44.0).unwrap(),
                0.0,
                130.0,
                3.0,
            )
            .unwrap(),
            SensorModel::sparkfun(0.0, 130.0, 3.0).unwrap(),
            SensorModel::sparkfun_amplitude(
                LinearCalibration::new(0.05, 35.0).unwrap(),
                0.0,
                130.0,
                3.0,
            )
            .unwrap(),
            SensorModel::openjumper(
                ElectretParams::new(316.22, 19.95, P_REF_PASCAL).unwrap(),
                0.0,
                130.0,
                5.0,
            )
            .unwrap(),
        ]
    }

    #[test]
    fn encode_examples() {
        let sen = SensorModel::sen0232();
        assert!((encode_raw(60.0, &sen).unwrap() - 1.2).abs() < 1e-12);

        let grove = SensorModel::grove(
            LinearCalibration::new(0.12, 44.0).unwrap(),
            0.0,
            130.0,
            3.0,
        )
        .unwrap();
        assert_eq!(encode_raw(44.0, &grove).unwrap(), 0.0);

        assert!(matches!(
            encode_raw(140.0, &sen),
            Err(CalibError::OutOfRange { .. })
        ));
    }

    #[test]
    fn round_trip_within_tolerance_for_all_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for model in all_models() {
            // Stay a hair inside the range so clamping cannot mask errors.
            let lo = model.range_min_dba + 1.0;
            let hi = model.range_max_dba - 1.0;
            let tol = if model.kind == SensorKind::Sparkfun && model.linear.is_none() {
                1.0 // integer truncation
            } else {
                0.5
            };
            for _ in 0..1000 {
                let level = rng.gen_range(lo..hi);
                let raw = encode_raw(level, &model).unwrap();
                let back = calib::apply_calibration(&model, raw).unwrap();
                assert!(
                    (back - level).abs() <= tol,
                    "{:?}: {level} -> {raw} -> {back}",
                    model.kind
                );
            }
        }
    }

    fn test_node(window_seconds: u32) -> EmulatedNode {
        EmulatedNode {
            identity: NodeIdentity {
                node_id: "n1".into(),
                school_id: "s1".into(),
                room_id: "r1".into(),
            },
            model: SensorModel::sen0232(),
            profile: crate::scenario::school_day_profile(),
            tz: DEFAULT_TZ,
            window_seconds,
            mode: AggregateMode::Energetic,
            sample_period_secs: 1,
        }
    }

    #[test]
    fn one_day_of_five_minute_windows() {
        let node = test_node(300);
        let date = NaiveDate::from_ymd_opt(2019, 3, 11).unwrap();
        let readings = node.simulate_day(date).unwrap();
        assert_eq!(readings.len(), 288);
        for r in &readings {
            assert!(crate::timeutil::is_window_aligned(r.window_start, 300));
            assert_eq!(r.sample_count, 300);
            assert_eq!(r.metric, NOISE_METRIC);
            assert!(r.value >= node.model.range_min_dba && r.value <= node.model.range_max_dba);
        }
        assert!(readings.windows(2).all(|w| w[0].window_start < w[1].window_start));
    }

    #[test]
    fn readings_are_byte_deterministic() {
        let node = test_node(60);
        let date = NaiveDate::from_ymd_opt(2019, 3, 11).unwrap();
        let a = serde_json::to_vec(&node.simulate_day(date).unwrap()).unwrap();
        let b = serde_json::to_vec(&node.simulate_day(date).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn window_below_privacy_floor_is_rejected() {
        let node = test_node(10);
        let date = NaiveDate::from_ymd_opt(2019, 3, 11).unwrap();
        assert!(matches!(
            node.simulate_day(date),
            Err(EdgeError::BadWindow(10))
        ));
    }

    #[test]
    fn zero_jitter_class_window_hits_class_level_exactly() {
        let mut node = test_node(300);
        node.profile.noise_jitter_sd = 0.0;
        node.profile.peak_events.clear();
        let date = NaiveDate::from_ymd_opt(2019, 3, 11).unwrap();
        let readings = node.simulate_day(date).unwrap();
        let noon = readings
            .iter()
            .find(|r| {
                r.window_start.with_timezone(&DEFAULT_TZ).time()
                    == NaiveTime::from_hms_opt(12, 0, 0).unwrap()
            })
            .unwrap();
        assert!((noon.value - 65.0).abs() < 1e-9);
    }
}
