//! Domain logic for an indoor-noise telemetry pipeline aimed at school
//! buildings: low-cost sound sensor calibration, classroom node emulation
//! with privacy-preserving on-node averaging, multi-granularity Leq
//! rollups, and threshold-exceedance analytics over school hours.
//!
//! The crate is network-free. The HTTP service lives in
//! `noisewatch-server`, the operator commands in `noisewatch-cli`.

pub mod analytics;
pub mod calib;
pub mod config;
pub mod edge;
pub mod ingest;
pub mod leq;
pub mod reading;
pub mod rollup;
pub mod scenario;
pub mod timeutil;

pub use reading::{NoiseReading, MIN_WINDOW_SECONDS, NOISE_METRIC};
