//! The one record type allowed to cross the network: a privacy-safe
//! on-node window aggregate. Raw samples never leave a node; every
//! outbound payload is a batch of these readings.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Metric name carried by every reading.
pub const NOISE_METRIC: &str = "noise_leq_dba";

/// Privacy floor: nodes must average over at least this many seconds
/// before anything is transmitted.
pub const MIN_WINDOW_SECONDS: u32 = 30;

/// One on-node window aggregate in dBA.
///
/// The serialized form is the wire format: exact field names, with
/// `window_start` as seconds-resolution RFC 3339 UTC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReading {
    pub node_id: String,
    pub school_id: String,
    pub room_id: String,
    #[serde(with = "crate::timeutil::rfc3339_utc")]
    pub window_start: DateTime<Utc>,
    pub window_seconds: u32,
    pub metric: String,
    pub value: f64,
    pub sample_count: u32,
}

impl NoiseReading {
    /// Uniqueness key for server-side deduplication:
    /// `(node_id, metric, window_start, window_seconds)`.
    pub fn dedup_key(&self) -> (&str, &str, i64, u32) {
        (
            &self.node_id,
            &self.metric,
            self.window_start.timestamp(),
            self.window_seconds,
        )
    }
}
