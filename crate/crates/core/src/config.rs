//! The fleet configuration document: one TOML file describing the
//! schools, their hours, and each room's sensor board and day scenario.
//! The same file drives the emulator and tells the service which hours
//! to report over.

use std::collections::HashSet;
use std::path::Path;

use chrono::NaiveTime;
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{SchoolHours, WeekdaySet};
use crate::calib::{
    CalibError, ElectretParams, LinearCalibration, SensorModel, P_REF_PASCAL,
};
use crate::edge::{EmulatedNode, NodeIdentity};
use crate::leq::AggregateMode;
use crate::reading::MIN_WINDOW_SECONDS;
use crate::scenario::{ScenarioError, ScenarioProfile, MAX_SAMPLE_PERIOD_SECS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid sensor for room {room}: {source}")]
    Sensor {
        room: String,
        #[source]
        source: CalibError,
    },
    #[error("invalid scenario for room {room}: {source}")]
    Scenario {
        room: String,
        #[source]
        source: ScenarioError,
    },
}

fn default_window_seconds() -> u32 {
    300
}

fn default_sample_period() -> u32 {
    1
}

fn default_tz() -> Tz {
    chrono_tz::Europe::Athens
}

fn default_p_ref() -> f64 {
    P_REF_PASCAL
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    /// Ingest service base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    /// On-node aggregation window. At least 30 s; must divide 300.
    #[serde(default = "default_window_seconds")]
    pub window_seconds: u32,
    #[serde(default)]
    pub aggregate_mode: AggregateMode,
    /// Node sampling period, 1–5 s.
    #[serde(default = "default_sample_period")]
    pub sample_period_secs: u32,
    pub schools: Vec<SchoolConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchoolConfig {
    pub school_id: String,
    #[serde(default = "default_tz")]
    pub time_zone: Tz,
    #[serde(with = "crate::timeutil::hm_time")]
    pub open: NaiveTime,
    #[serde(with = "crate::timeutil::hm_time")]
    pub close: NaiveTime,
    #[serde(default)]
    pub school_days: WeekdaySet,
    pub rooms: Vec<RoomConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomConfig {
    pub room_id: String,
    /// Defaults to `<school_id>-<room_id>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<String>,
    pub sensor: SensorConfig,
    pub profile: ScenarioProfile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SensorConfig {
    Openjumper {
        sensitivity_v_per_pa: f64,
        gain: f64,
        #[serde(default = "default_p_ref")]
        p_ref: f64,
        range_min_dba: f64,
        range_max_dba: f64,
        stated_error_db: f64,
    },
    Grove {
        slope: f64,
        intercept: f64,
        range_min_dba: f64,
        range_max_dba: f64,
        stated_error_db: f64,
    },
    /// Log-regression mode by default; set `slope`/`intercept` for the
    /// fitted amplitude mode.
    Sparkfun {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slope: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        intercept: Option<f64>,
        range_min_dba: f64,
        range_max_dba: f64,
        stated_error_db: f64,
    },
    /// Fixed 30–130 dBA range and ±1.5 dB error; no parameters.
    Sen0232 {},
}

impl SensorConfig {
    pub fn build(&self) -> Result<SensorModel, CalibError> {
        match *self {
            SensorConfig::Openjumper {
                sensitivity_v_per_pa,
                gain,
                p_ref,
                range_min_dba,
                range_max_dba,
                stated_error_db,
            } => SensorModel::openjumper(
                ElectretParams::new(sensitivity_v_per_pa, gain, p_ref)?,
                range_min_dba,
                range_max_dba,
                stated_error_db,
            ),
            SensorConfig::Grove {
                slope,
                intercept,
                range_min_dba,
                range_max_dba,
                stated_error_db,
            } => SensorModel::grove(
                LinearCalibration::new(slope, intercept)?,
                range_min_dba,
                range_max_dba,
                stated_error_db,
            ),
            SensorConfig::Sparkfun {
                slope,
                intercept,
                range_min_dba,
                range_max_dba,
                stated_error_db,
            } => match (slope, intercept) {
                (Some(slope), Some(intercept)) => SensorModel::sparkfun_amplitude(
                    LinearCalibration::new(slope, intercept)?,
                    range_min_dba,
                    range_max_dba,
                    stated_error_db,
                ),
                (None, None) => {
                    SensorModel::sparkfun(range_min_dba, range_max_dba, stated_error_db)
                }
                _ => Err(CalibError::BadParameter {
                    name: "sparkfun slope/intercept must come together",
                    value: f64::NAN,
                }),
            },
            SensorConfig::Sen0232 {} => Ok(SensorModel::sen0232()),
        }
    }
}

impl SchoolConfig {
    pub fn hours(&self) -> SchoolHours {
        SchoolHours {
            time_zone: self.time_zone,
            open: self.open,
            close: self.close,
            school_days: self.school_days,
        }
    }
}

impl RoomConfig {
    pub fn node_id(&self, school_id: &str) -> String {
        self.node_id
            .clone()
            .unwrap_or_else(|| format!("{school_id}-{}", self.room_id))
    }
}

impl FleetConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let config: FleetConfig = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.window_seconds < MIN_WINDOW_SECONDS || 300 % self.window_seconds != 0 {
            return Err(ConfigError::Invalid(format!(
                "window_seconds must be >= {MIN_WINDOW_SECONDS} and divide 300, got {}",
                self.window_seconds
            )));
        }
        if self.sample_period_secs == 0 || self.sample_period_secs > MAX_SAMPLE_PERIOD_SECS {
            return Err(ConfigError::Invalid(format!(
                "sample_period_secs must be 1..={MAX_SAMPLE_PERIOD_SECS}, got {}",
                self.sample_period_secs
            )));
        }
        if self.schools.is_empty() {
            return Err(ConfigError::Invalid("no schools configured".into()));
        }
        let mut school_ids = HashSet::new();
        let mut node_ids = HashSet::new();
        for school in &self.schools {
            if !school_ids.insert(&school.school_id) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate school_id {:?}",
                    school.school_id
                )));
            }
            if school.open >= school.close {
                return Err(ConfigError::Invalid(format!(
                    "school {:?}: open must precede close",
                    school.school_id
                )));
            }
            let mut room_ids = HashSet::new();
            for room in &school.rooms {
                if !room_ids.insert(&room.room_id) {
                    return Err(ConfigError::Invalid(format!(
                        "school {:?}: duplicate room_id {:?}",
                        school.school_id, room.room_id
                    )));
                }
                if !node_ids.insert(room.node_id(&school.school_id)) {
                    return Err(ConfigError::Invalid(format!(
                        "duplicate node_id {:?}",
                        room.node_id(&school.school_id)
                    )));
                }
                room.sensor.build().map_err(|source| ConfigError::Sensor {
                    room: room.room_id.clone(),
                    source,
                })?;
                room.profile
                    .validate()
                    .map_err(|source| ConfigError::Scenario {
                        room: room.room_id.clone(),
                        source,
                    })?;
            }
        }
        Ok(())
    }

    /// Instantiate every room as an emulated node, fleet order.
    pub fn nodes(&self) -> Result<Vec<EmulatedNode>, ConfigError> {
        let mut nodes = Vec::new();
        for school in &self.schools {
            for room in &school.rooms {
                let model = room.sensor.build().map_err(|source| ConfigError::Sensor {
                    room: room.room_id.clone(),
                    source,
                })?;
                nodes.push(EmulatedNode {
                    identity: NodeIdentity {
                        node_id: room.node_id(&school.school_id),
                        school_id: school.school_id.clone(),
                        room_id: room.room_id.clone(),
                    },
                    model,
                    profile: room.profile.clone(),
                    tz: school.time_zone,
                    window_seconds: self.window_seconds,
                    mode: self.aggregate_mode,
                    sample_period_secs: self.sample_period_secs,
                });
            }
        }
        Ok(nodes)
    }

    pub fn school(&self, school_id: &str) -> Option<&SchoolConfig> {
        self.schools.iter().find(|s| s.school_id == school_id)
    }

    /// `(school_id, hours)` pairs for the service's report endpoints.
    pub fn hours_map(&self) -> Vec<(String, SchoolHours)> {
        self.schools
            .iter()
            .map(|s| (s.school_id.clone(), s.hours()))
            .collect()
    }
}
