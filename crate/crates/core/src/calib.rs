//! Raw-signal → decibel transforms for the four supported sound sensor
//! boards, and least-squares fitting of per-device calibration lines
//! against a trusted reference meter.
//!
//! Three of the boards (Openjumper, Grove, Sparkfun) are threshold
//! detectors pressed into service as level meters, so their transforms
//! are software calibrations: an electret sensitivity/gain model for the
//! Openjumper, fitted linear maps for the Grove and the Sparkfun's
//! amplitude mode, and a fixed log regression for the Sparkfun's default
//! mode. The SEN0232 reports decibels directly and only needs its analog
//! scaling undone.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reference sound pressure defining 0 dB SPL: 20 µPa.
pub const P_REF_PASCAL: f64 = 2e-5;

/// SEN0232 output scaling: the board emits 10 mV per dBA.
pub const SEN0232_DB_PER_VOLT: f64 = 50.0;
/// SEN0232 stated measuring range, dBA.
pub const SEN0232_RANGE: (f64, f64) = (30.0, 130.0);
/// SEN0232 stated accuracy, ±dB.
pub const SEN0232_ERROR_DB: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("input must be finite, got {0}")]
    NonFinite(f64),
    #[error("input must be positive, got {0}")]
    NonPositive(f64),
    #[error("input must be non-negative, got {0}")]
    Negative(f64),
    #[error("parameter {name} is out of domain: {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("linear fit needs at least two pairs with distinct device values")]
    DegenerateFit,
    #[error("{kind:?} sensor model is missing its {expected} parameters")]
    MissingParams {
        kind: SensorKind,
        expected: &'static str,
    },
    #[error("level {level} dBA is outside the sensor range [{min}, {max}]")]
    OutOfRange { level: f64, min: f64, max: f64 },
}

fn check_param(name: &'static str, value: f64, positive: bool) -> Result<(), CalibError> {
    if !value.is_finite() || (positive && value <= 0.0) {
        return Err(CalibError::BadParameter { name, value });
    }
    Ok(())
}

/// Electret microphone + preamplifier model for the Openjumper board.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectretParams {
    /// Microphone sensitivity in volts per pascal.
    pub sensitivity_v_per_pa: f64,
    /// Linear preamplifier gain (dimensionless).
    pub gain: f64,
    /// Reference pressure for 0 dB, pascals.
    pub p_ref: f64,
}

impl ElectretParams {
    pub fn new(sensitivity_v_per_pa: f64, gain: f64, p_ref: f64) -> Result<Self, CalibError> {
        check_param("sensitivity_v_per_pa", sensitivity_v_per_pa, true)?;
        check_param("gain", gain, true)?;
        check_param("p_ref", p_ref, true)?;
        Ok(Self {
            sensitivity_v_per_pa,
            gain,
            p_ref,
        })
    }

    /// The RMS voltage that maps to exactly 0 dB under this model.
    pub fn zero_db_vrms(&self) -> f64 {
        self.gain * self.sensitivity_v_per_pa * self.p_ref
    }
}

/// A fitted `dB = slope · raw + intercept` calibration line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearCalibration {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearCalibration {
    /// Slope must be nonzero so the line stays invertible for emulation.
    pub fn new(slope: f64, intercept: f64) -> Result<Self, CalibError> {
        check_param("intercept", intercept, false)?;
        check_param("slope", slope, false)?;
        if slope == 0.0 {
            return Err(CalibError::BadParameter {
                name: "slope",
                value: slope,
            });
        }
        Ok(Self { slope, intercept })
    }
}

/// One observation used to fit a calibration line: the raw device value
/// alongside the dB level a trusted meter reported at the same moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPair {
    pub device_value: f64,
    pub reference_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Openjumper,
    Grove,
    Sparkfun,
    Sen0232,
}

/// A sensor board plus the calibration parameters its kind requires.
///
/// Exactly the parameter block matching `kind` must be present:
/// Openjumper carries electret params, Grove a linear calibration, the
/// Sparkfun optionally carries a linear calibration (amplitude mode;
/// without one it uses its fixed log regression), and the SEN0232
/// carries none.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub kind: SensorKind,
    pub electret: Option<ElectretParams>,
    pub linear: Option<LinearCalibration>,
    pub range_min_dba: f64,
    pub range_max_dba: f64,
    pub stated_error_db: f64,
}

impl SensorModel {
    pub fn openjumper(
        params: ElectretParams,
        range_min_dba: f64,
        range_max_dba: f64,
        stated_error_db: f64,
    ) -> Result<Self, CalibError> {
        Self::validated(Self {
            kind: SensorKind::Openjumper,
            electret: Some(params),
            linear: None,
            range_min_dba,
            range_max_dba,
            stated_error_db,
        })
    }

    pub fn grove(
        cal: LinearCalibration,
        range_min_dba: f64,
        range_max_dba: f64,
        stated_error_db: f64,
    ) -> Result<Self, CalibError> {
        Self::validated(Self {
            kind: SensorKind::Grove,
            electret: None,
            linear: Some(cal),
            range_min_dba,
            range_max_dba,
            stated_error_db,
        })
    }

    /// Sparkfun in its default mode: the fixed log regression.
    pub fn sparkfun(
        range_min_dba: f64,
        range_max_dba: f64,
        stated_error_db: f64,
    ) -> Result<Self, CalibError> {
        Self::validated(Self {
            kind: SensorKind::Sparkfun,
            electret: None,
            linear: None,
            range_min_dba,
            range_max_dba,
            stated_error_db,
        })
    }

    /// Sparkfun driven from its amplitude envelope through a fitted line.
    pub fn sparkfun_amplitude(
        cal: LinearCalibration,
        range_min_dba: f64,
        range_max_dba: f64,
        stated_error_db: f64,
    ) -> Result<Self, CalibError> {
        Self::validated(Self {
            kind: SensorKind::Sparkfun,
            electret: None,
            linear: Some(cal),
            range_min_dba,
            range_max_dba,
            stated_error_db,
        })
    }

    /// SEN0232 with its fixed datasheet range and error.
    pub fn sen0232() -> Self {
        Self {
            kind: SensorKind::Sen0232,
            electret: None,
            linear: None,
            range_min_dba: SEN0232_RANGE.0,
            range_max_dba: SEN0232_RANGE.1,
            stated_error_db: SEN0232_ERROR_DB,
        }
    }

    fn validated(model: Self) -> Result<Self, CalibError> {
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        check_param("range_min_dba", self.range_min_dba, false)?;
        check_param("range_max_dba", self.range_max_dba, false)?;
        check_param("stated_error_db", self.stated_error_db, false)?;
        if self.range_min_dba >= self.range_max_dba {
            return Err(CalibError::BadParameter {
                name: "range_min_dba",
                value: self.range_min_dba,
            });
        }
        let expect = |ok: bool, expected: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(CalibError::MissingParams {
                    kind: self.kind,
                    expected,
                })
            }
        };
        match self.kind {
            SensorKind::Openjumper => {
                expect(self.electret.is_some() && self.linear.is_none(), "electret")
            }
            SensorKind::Grove => expect(self.electret.is_none() && self.linear.is_some(), "linear"),
            SensorKind::Sparkfun => expect(self.electret.is_none(), "no electret"),
            SensorKind::Sen0232 => {
                if self.electret.is_some() || self.linear.is_some() {
                    return Err(CalibError::MissingParams {
                        kind: self.kind,
                        expected: "no calibration",
                    });
                }
                if self.range_min_dba != SEN0232_RANGE.0
                    || self.range_max_dba != SEN0232_RANGE.1
                    || self.stated_error_db != SEN0232_ERROR_DB
                {
                    return Err(CalibError::BadParameter {
                        name: "sen0232 range/error",
                        value: self.range_min_dba,
                    });
                }
                Ok(())
            }
        }
    }
}

/// Sound pressure level from an RMS voltage through the electret model:
/// `L_p = 20·log10(((v_rms / G) / S) / P_ref)`.
pub fn spl_from_vrms(v_rms: f64, params: &ElectretParams) -> Result<f64, CalibError> {
    if !v_rms.is_finite() {
        return Err(CalibError::NonFinite(v_rms));
    }
    if v_rms <= 0.0 {
        return Err(CalibError::NonPositive(v_rms));
    }
    let p_rms = (v_rms / params.gain) / params.sensitivity_v_per_pa;
    Ok(20.0 * (p_rms / params.p_ref).log10())
}

/// Sparkfun log regression: `20·log10(value / 20) + 50`, truncated to an
/// integer the way a C cast would (toward zero).
pub fn sparkfun_db(value: f64) -> Result<f64, CalibError> {
    if !value.is_finite() {
        return Err(CalibError::NonFinite(value));
    }
    if value <= 0.0 {
        return Err(CalibError::NonPositive(value));
    }
    Ok((20.0 * (value / 20.0).log10() + 50.0).trunc())
}

/// Fitted-line transform: `slope · x + intercept`.
pub fn linear_db(x: f64, cal: &LinearCalibration) -> Result<f64, CalibError> {
    if !x.is_finite() {
        return Err(CalibError::NonFinite(x));
    }
    Ok(cal.slope * x + cal.intercept)
}

/// SEN0232 analog output to dBA, clamped to the board's stated range.
pub fn sen0232_db(voltage: f64) -> Result<f64, CalibError> {
    if !voltage.is_finite() {
        return Err(CalibError::NonFinite(voltage));
    }
    if voltage < 0.0 {
        return Err(CalibError::Negative(voltage));
    }
    Ok((voltage * SEN0232_DB_PER_VOLT).clamp(SEN0232_RANGE.0, SEN0232_RANGE.1))
}

/// Ordinary least squares over calibration pairs, minimizing squared dB
/// residuals. Needs at least two distinct device values.
pub fn fit_linear(pairs: &[CalibrationPair]) -> Result<LinearCalibration, CalibError> {
    if pairs.len() < 2 {
        return Err(CalibError::DegenerateFit);
    }
    for p in pairs {
        if !p.device_value.is_finite() || !p.reference_db.is_finite() {
            return Err(CalibError::NonFinite(if p.device_value.is_finite() {
                p.reference_db
            } else {
                p.device_value
            }));
        }
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.device_value).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.reference_db).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for p in pairs {
        let dx = p.device_value - mean_x;
        sxx += dx * dx;
        sxy += dx * (p.reference_db - mean_y);
    }
    if sxx == 0.0 {
        return Err(CalibError::DegenerateFit);
    }
    let slope = sxy / sxx;
    if slope == 0.0 {
        // A flat line cannot be inverted and is useless as a calibration.
        return Err(CalibError::DegenerateFit);
    }
    Ok(LinearCalibration {
        slope,
        intercept: mean_y - slope * mean_x,
    })
}

/// Route a raw sample through the transform matching the model's kind and
/// clamp the result into the model's measuring range.
pub fn apply_calibration(model: &SensorModel, raw: f64) -> Result<f64, CalibError> {
    let db = match model.kind {
        SensorKind::Openjumper => {
            let params = model.electret.ok_or(CalibError::MissingParams {
                kind: model.kind,
                expected: "electret",
            })?;
            spl_from_vrms(raw, &params)?
        }
        SensorKind::Grove => {
            let cal = model.linear.ok_or(CalibError::MissingParams {
                kind: model.kind,
                expected: "linear",
            })?;
            linear_db(raw, &cal)?
        }
        SensorKind::Sparkfun => match model.linear {
            Some(cal) => linear_db(raw, &cal)?,
            None => sparkfun_db(raw)?,
        },
        SensorKind::Sen0232 => sen0232_db(raw)?,
    };
    Ok(db.clamp(model.range_min_dba, model.range_max_dba))
}

/// Load calibration pairs from CSV with header `device_value,reference_db`.
pub fn pairs_from_csv<R: Read>(reader: R) -> Result<Vec<CalibrationPair>, csv::Error> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().collect()
}
