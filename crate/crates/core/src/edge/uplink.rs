//! At-least-once uplink with a bounded retry buffer.
//!
//! Readings queue in a local buffer capped by time span (default 24 h of
//! readings); transport failures back off exponentially and the buffer
//! drops its oldest readings once the span overflows. Duplicates on the
//! wire are fine — the server deduplicates.
//!
//! The transport sees exactly the serialized POST body, so tests can
//! capture every outbound byte and verify nothing but window aggregates
//! ever leaves the node.

use std::collections::VecDeque;

use thiserror::Error;

use crate::reading::NoiseReading;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("endpoint rejected the batch: {0}")]
    Rejected(String),
}

/// Server acknowledgement of one POSTed batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestAck {
    pub accepted: u64,
    pub duplicates: u64,
    pub rejected: u64,
}

/// Delivers one serialized readings batch (a JSON array, the exact POST
/// body) to the ingest endpoint.
pub trait UplinkTransport {
    fn post_readings(&mut self, body: &[u8]) -> Result<IngestAck, TransportError>;
}

impl<T: UplinkTransport> UplinkTransport for &mut T {
    fn post_readings(&mut self, body: &[u8]) -> Result<IngestAck, TransportError> {
        (**self).post_readings(body)
    }
}

#[derive(Debug, Clone)]
pub struct UplinkConfig {
    /// Maximum window-start span the buffer retains.
    pub buffer_span_secs: i64,
    /// Readings per POST.
    pub batch_size: usize,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
}

impl Default for UplinkConfig {
    fn default() -> Self {
        Self {
            buffer_span_secs: 24 * 3600,
            batch_size: 500,
            backoff_base_ms: 1_000,
            backoff_cap_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UplinkStats {
    pub enqueued: u64,
    pub delivered: u64,
    pub duplicates: u64,
    pub rejected: u64,
    pub dropped: u64,
    pub attempts: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlushOutcome {
    /// Buffer drained completely.
    Drained,
    /// Backoff timer has not expired yet; nothing was sent.
    WaitingForBackoff { until_ms: u64 },
    /// A send failed; retry after the returned deadline.
    Failed { retry_at_ms: u64 },
}

pub struct Uplink<T> {
    transport: T,
    config: UplinkConfig,
    buffer: VecDeque<NoiseReading>,
    consecutive_failures: u32,
    next_attempt_at_ms: u64,
    stats: UplinkStats,
}

impl<T: UplinkTransport> Uplink<T> {
    pub fn new(transport: T, config: UplinkConfig) -> Self {
        Self {
            transport,
            config,
            buffer: VecDeque::new(),
            consecutive_failures: 0,
            next_attempt_at_ms: 0,
            stats: UplinkStats::default(),
        }
    }

    pub fn stats(&self) -> UplinkStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.buffer.len()
    }

    /// Queue a reading, evicting the oldest ones if the buffered span
    /// would exceed the configured capacity.
    pub fn enqueue(&mut self, reading: NoiseReading) {
        self.stats.enqueued += 1;
        let newest = reading.window_start.timestamp();
        self.buffer.push_back(reading);
        while let Some(oldest) = self.buffer.front() {
            if newest - oldest.window_start.timestamp() >= self.config.buffer_span_secs {
                self.buffer.pop_front();
                self.stats.dropped += 1;
            } else {
                break;
            }
        }
    }

    /// Attempt delivery of everything buffered. `now_ms` is the caller's
    /// clock (wall time or simulated), used for backoff scheduling.
    pub fn flush(&mut self, now_ms: u64) -> FlushOutcome {
        if self.buffer.is_empty() {
            return FlushOutcome::Drained;
        }
        if now_ms < self.next_attempt_at_ms {
            return FlushOutcome::WaitingForBackoff {
                until_ms: self.next_attempt_at_ms,
            };
        }
        while !self.buffer.is_empty() {
            let n = self.buffer.len().min(self.config.batch_size);
            let batch: Vec<&NoiseReading> = self.buffer.iter().take(n).collect();
            let body = serde_json::to_vec(&batch).expect("readings serialize");
            self.stats.attempts += 1;
            match self.transport.post_readings(&body) {
                Ok(ack) => {
                    self.buffer.drain(..n);
                    self.consecutive_failures = 0;
                    self.next_attempt_at_ms = now_ms;
                    self.stats.delivered += n as u64;
                    self.stats.duplicates += ack.duplicates;
                    self.stats.rejected += ack.rejected;
                }
                Err(_) => {
                    self.stats.failures += 1;
                    self.consecutive_failures += 1;
                    let shift = self.consecutive_failures.saturating_sub(1).min(16);
                    let delay = self
                        .config
                        .backoff_base_ms
                        .saturating_mul(1u64 << shift)
                        .min(self.config.backoff_cap_ms);
                    self.next_attempt_at_ms = now_ms + delay;
                    return FlushOutcome::Failed {
                        retry_at_ms: self.next_attempt_at_ms,
                    };
                }
            }
        }
        FlushOutcome::Drained
    }

    pub fn consecutive_failures(&self) -> u32 {
        self.consecutive_failures
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    struct ScriptedTransport {
        // true = deliver, false = fail
        script: Vec<bool>,
        calls: usize,
        bodies: Vec<Vec<u8>>,
    }

    impl ScriptedTransport {
        fn new(script: Vec<bool>) -> Self {
            Self {
                script,
                calls: 0,
                bodies: Vec::new(),
            }
        }
    }

    impl UplinkTransport for ScriptedTransport {
        fn post_readings(&mut self, body: &[u8]) -> Result<IngestAck, TransportError> {
            let ok = self.script.get(self.calls).copied().unwrap_or(true);
            self.calls += 1;
            if ok {
                self.bodies.push(body.to_vec());
                let n = serde_json::from_slice::<Vec<serde_json::Value>>(body)
                    .unwrap()
                    .len() as u64;
                Ok(IngestAck {
                    accepted: n,
                    duplicates: 0,
                    rejected: 0,
                })
            } else {
                Err(TransportError::Unreachable("down".into()))
            }
        }
    }

    fn reading_at(minute: i64) -> NoiseReading {
        NoiseReading {
            node_id: "n".into(),
            school_id: "s".into(),
            room_id: "r".into(),
            window_start: Utc.timestamp_opt(minute * 60, 0).unwrap(),
            window_seconds: 60,
            metric: crate::reading::NOISE_METRIC.into(),
            value: 50.0,
            sample_count: 60,
        }
    }

    #[test]
    fn happy_path_delivers_everything() {
        let mut up = Uplink::new(ScriptedTransport::new(vec![]), UplinkConfig::default());
        for m in 0..100 {
            up.enqueue(reading_at(m));
        }
        assert_eq!(up.flush(0), FlushOutcome::Drained);
        assert_eq!(up.stats().delivered, 100);
        assert_eq!(up.pending(), 0);
    }

    #[test]
    fn outage_buffers_then_delivers_after_recovery() {
        // Endpoint down for the first 3 attempts, then healthy.
        let mut up = Uplink::new(
            ScriptedTransport::new(vec![false, false, false]),
            UplinkConfig::default(),
        );
        let mut now = 0u64;
        for m in 0..10 {
            up.enqueue(reading_at(m));
            match up.flush(now) {
                FlushOutcome::Failed { retry_at_ms } | FlushOutcome::WaitingForBackoff { until_ms: retry_at_ms } => {
                    now = now.max(retry_at_ms)
                }
                FlushOutcome::Drained => {}
            }
            now += 100;
        }
        // Drive until drained.
        loop {
            match up.flush(now) {
                FlushOutcome::Drained => break,
                FlushOutcome::Failed { retry_at_ms }
                | FlushOutcome::WaitingForBackoff { until_ms: retry_at_ms } => now = retry_at_ms,
            }
        }
        assert_eq!(up.stats().delivered, 10);
        assert_eq!(up.stats().dropped, 0);
    }

    #[test]
    fn backoff_doubles_up_to_cap() {
        let mut up = Uplink::new(
            ScriptedTransport::new(vec![false; 12]),
            UplinkConfig::default(),
        );
        up.enqueue(reading_at(0));
        let mut now = 0u64;
        let mut delays = Vec::new();
        for _ in 0..9 {
            match up.flush(now) {
                FlushOutcome::Failed { retry_at_ms } => {
                    delays.push(retry_at_ms - now);
                    now = retry_at_ms;
                }
                other => panic!("expected failure, got {other:?}"),
            }
        }
        assert_eq!(
            delays,
            vec![1_000, 2_000, 4_000, 8_000, 16_000, 32_000, 60_000, 60_000, 60_000]
        );
    }

    #[test]
    fn overflow_drops_oldest_keeping_newest_span() {
        // 25 h of 1-minute readings into a 24 h buffer with the endpoint
        // down: exactly the newest 24 h survive.
        let mut up = Uplink::new(
            ScriptedTransport::new(vec![false; 1]),
            UplinkConfig::default(),
        );
        let total = 25 * 60;
        for m in 0..total {
            up.enqueue(reading_at(m));
        }
        assert_eq!(up.pending(), 24 * 60);
        assert_eq!(up.stats().dropped as i64, total - 24 * 60);
        let oldest = 60 * (total - 24 * 60);
        assert_eq!(
            up.buffer.front().unwrap().window_start.timestamp(),
            oldest
        );
    }

    #[test]
    fn outbound_bytes_are_only_window_aggregates() {
        let mut transport = ScriptedTransport::new(vec![]);
        {
            let mut up = Uplink::new(&mut transport, UplinkConfig::default());
            for m in 0..50 {
                up.enqueue(reading_at(m));
            }
            up.flush(0);
        }
        assert!(!transport.bodies.is_empty());
        for body in &transport.bodies {
            let batch: Vec<NoiseReading> = serde_json::from_slice(body).unwrap();
            for r in batch {
                assert!(r.window_seconds >= crate::reading::MIN_WINDOW_SECONDS);
                assert!(r.sample_count >= 1);
            }
        }
    }
}
