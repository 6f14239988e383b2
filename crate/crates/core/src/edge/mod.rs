//! Classroom node emulation: synthesizes a raw sample stream from a
//! school-day scenario, runs it through the sensor calibration path,
//! aggregates into privacy-safe windows, and uplinks only the window
//! aggregates.

mod node;
pub mod targets;
mod uplink;

pub use node::{encode_raw, EdgeError, EmulatedNode, NodeIdentity, RawSample};
pub use uplink::{
    FlushOutcome, IngestAck, TransportError, Uplink, UplinkConfig, UplinkStats, UplinkTransport,
};
