//! Reading storage: time-partitioned (one JSONL partition per school per
//! day), append-only on disk, with an in-memory ordered index, a global
//! dedup set over `(node_id, metric, window_start, window_seconds)`, and
//! incrementally maintained rollup buckets.
//!
//! Writes go through [`Store::ingest_batch`], which validates, dedups,
//! indexes, folds rollups and appends the partition files before
//! returning, so anything acknowledged survives a restart.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use noisewatch_core::ingest::{validate_reading, IngestStats, RejectCode};
use noisewatch_core::reading::{NoiseReading, NOISE_METRIC};
use noisewatch_core::rollup::{AggregateBucket, Granularity, RollupStore, RoomScope};
use noisewatch_core::timeutil;

const DAY_SECONDS: i64 = 86_400;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt partition {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Global uniqueness key; the metric is fixed so it is not stored.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ReadingKey {
    node: Arc<str>,
    window_start: i64,
    window_seconds: u32,
}

/// Per-partition row key: ascending window start, then node, then
/// window length — a stable total order for pagination.
type RowKey = (i64, Arc<str>, u32);

#[derive(Debug, Clone)]
struct Row {
    room: Arc<str>,
    value: f64,
    sample_count: u32,
    received_at: i64,
}

#[derive(Debug, Default)]
struct Partition {
    rows: BTreeMap<RowKey, Row>,
    pending: Vec<u8>,
}

/// The persisted line format: the wire reading plus receipt time.
#[derive(Serialize, Deserialize)]
struct DiskRow {
    node_id: String,
    school_id: String,
    room_id: String,
    #[serde(with = "noisewatch_core::timeutil::rfc3339_utc")]
    window_start: DateTime<Utc>,
    window_seconds: u32,
    metric: String,
    value: f64,
    sample_count: u32,
    #[serde(with = "noisewatch_core::timeutil::rfc3339_utc")]
    received_at: DateTime<Utc>,
}

/// A stored reading as served by the query API.
#[derive(Debug, Clone, Serialize)]
pub struct StoredReading {
    #[serde(flatten)]
    pub reading: NoiseReading,
    #[serde(with = "noisewatch_core::timeutil::rfc3339_utc")]
    pub received_at: DateTime<Utc>,
}

/// Result of one ingest batch.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct BatchOutcome {
    pub accepted: u64,
    pub duplicates: u64,
    pub rejected: Vec<(usize, RejectCode)>,
}

/// Opaque pagination cursor: the last row key already returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub window_start: i64,
    pub node_id: String,
    pub window_seconds: u32,
}

pub struct Store {
    data_dir: PathBuf,
    interner: HashSet<Arc<str>>,
    dedup: HashSet<ReadingKey>,
    partitions: BTreeMap<(Arc<str>, i64), Partition>,
    rooms_by_school: BTreeMap<Arc<str>, BTreeSet<Arc<str>>>,
    rollup: RollupStore,
    stats: IngestStats,
    high_water: HashMap<Arc<str>, i64>,
}

impl Store {
    /// Open (or create) a data directory and rebuild the in-memory index
    /// and rollups from every partition found in it.
    pub fn open(data_dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(data_dir).map_err(io_err(data_dir))?;
        // Probe writability up front so `serve` fails fast.
        let probe = data_dir.join(".writable");
        fs::write(&probe, b"ok").map_err(io_err(data_dir))?;
        let _ = fs::remove_file(&probe);

        let mut store = Store {
            data_dir: data_dir.to_path_buf(),
            interner: HashSet::new(),
            dedup: HashSet::new(),
            partitions: BTreeMap::new(),
            rooms_by_school: BTreeMap::new(),
            rollup: RollupStore::new(),
            stats: IngestStats::default(),
            high_water: HashMap::new(),
        };
        store.load_existing()?;
        Ok(store)
    }

    fn load_existing(&mut self) -> Result<(), StoreError> {
        let school_dirs = fs::read_dir(&self.data_dir).map_err(io_err(&self.data_dir))?;
        let mut files = Vec::new();
        for entry in school_dirs {
            let entry = entry.map_err(io_err(&self.data_dir))?;
            if !entry.path().is_dir() {
                continue;
            }
            for file in fs::read_dir(entry.path()).map_err(io_err(&entry.path()))? {
                let file = file.map_err(io_err(&entry.path()))?;
                let path = file.path();
                if path.extension().map_or(false, |e| e == "jsonl") {
                    files.push(path);
                }
            }
        }
        files.sort();
        for path in files {
            let content = fs::read_to_string(&path).map_err(io_err(&path))?;
            for (i, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let row: DiskRow = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                let reading = NoiseReading {
                    node_id: row.node_id,
                    school_id: row.school_id,
                    room_id: row.room_id,
                    window_start: row.window_start,
                    window_seconds: row.window_seconds,
                    metric: row.metric,
                    value: row.value,
                    sample_count: row.sample_count,
                };
                // Identical code path as live ingest, minus re-appending.
                self.insert(&reading, row.received_at, false);
            }
        }
        // Loading replays history; lifetime counters start fresh.
        self.stats = IngestStats::default();
        self.high_water.clear();
        Ok(())
    }

    fn intern(&mut self, s: &str) -> Arc<str> {
        match self.interner.get(s) {
            Some(v) => v.clone(),
            None => {
                let v: Arc<str> = Arc::from(s);
                self.interner.insert(v.clone());
                v
            }
        }
    }

    /// Insert one validated reading. Returns false for a duplicate.
    fn insert(&mut self, reading: &NoiseReading, received_at: DateTime<Utc>, persist: bool) -> bool {
        let node = self.intern(&reading.node_id);
        let key = ReadingKey {
            node: node.clone(),
            window_start: reading.window_start.timestamp(),
            window_seconds: reading.window_seconds,
        };
        if self.dedup.contains(&key) {
            return false;
        }
        self.dedup.insert(key);

        let school = self.intern(&reading.school_id);
        let room = self.intern(&reading.room_id);
        let ts = reading.window_start.timestamp();
        let day = timeutil::floor_to(ts, DAY_SECONDS);

        self.rooms_by_school
            .entry(school.clone())
            .or_default()
            .insert(room.clone());

        let partition = self.partitions.entry((school.clone(), day)).or_default();
        partition.rows.insert(
            (ts, node, reading.window_seconds),
            Row {
                room: room.clone(),
                value: reading.value,
                sample_count: reading.sample_count,
                received_at: received_at.timestamp(),
            },
        );
        if persist {
            serde_json::to_writer(
                &mut partition.pending,
                &DiskRow {
                    node_id: reading.node_id.clone(),
                    school_id: reading.school_id.clone(),
                    room_id: reading.room_id.clone(),
                    window_start: reading.window_start,
                    window_seconds: reading.window_seconds,
                    metric: reading.metric.clone(),
                    value: reading.value,
                    sample_count: reading.sample_count,
                    received_at,
                },
            )
            .expect("row serializes");
            partition.pending.push(b'\n');
        }

        self.rollup
            .apply_reading(&school, &room, ts, reading.value, reading.sample_count);

        let hw = self.high_water.entry(school).or_insert(i64::MIN);
        if ts < *hw {
            self.stats.late += 1;
        } else {
            *hw = ts;
        }
        true
    }

    /// Validate, dedup, index and persist a batch. Items that failed to
    /// decode arrive as `Err(code)` and are reported rejected at their
    /// original index.
    pub fn ingest_batch(
        &mut self,
        batch: Vec<Result<NoiseReading, RejectCode>>,
        now: DateTime<Utc>,
    ) -> Result<BatchOutcome, StoreError> {
        let mut outcome = BatchOutcome::default();
        for (index, item) in batch.into_iter().enumerate() {
            let reading = match item {
                Ok(r) => r,
                Err(code) => {
                    outcome.rejected.push((index, code));
                    self.stats.rejected += 1;
                    continue;
                }
            };
            if let Err(code) = validate_reading(&reading, now) {
                outcome.rejected.push((index, code));
                self.stats.rejected += 1;
                continue;
            }
            if self.insert(&reading, now, true) {
                outcome.accepted += 1;
                self.stats.accepted += 1;
            } else {
                outcome.duplicates += 1;
                self.stats.duplicates += 1;
                self.log_conflict(&reading);
            }
        }
        self.flush_pending()?;
        Ok(outcome)
    }

    /// First write wins; a re-send with a different value only gets a log
    /// line.
    fn log_conflict(&self, reading: &NoiseReading) {
        let ts = reading.window_start.timestamp();
        let day = timeutil::floor_to(ts, DAY_SECONDS);
        if let Some(partition) = self
            .partitions
            .get(&(Arc::from(reading.school_id.as_str()), day))
        {
            if let Some(row) = partition.rows.get(&(
                ts,
                Arc::from(reading.node_id.as_str()),
                reading.window_seconds,
            )) {
                if (row.value - reading.value).abs() > 1e-12 {
                    tracing::warn!(
                        node = %reading.node_id,
                        window_start = %timeutil::format_utc(reading.window_start),
                        stored = row.value,
                        resent = reading.value,
                        "duplicate reading with different value; keeping first write"
                    );
                }
            }
        }
    }

    fn flush_pending(&mut self) -> Result<(), StoreError> {
        for ((school, day), partition) in self.partitions.iter_mut() {
            if partition.pending.is_empty() {
                continue;
            }
            let dir = self.data_dir.join(sanitize_component(school));
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let date = timeutil::from_epoch_seconds(*day).format("%Y-%m-%d");
            let path = dir.join(format!("{date}.jsonl"));
            let mut file = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(io_err(&path))?;
            file.write_all(&partition.pending).map_err(io_err(&path))?;
            file.flush().map_err(io_err(&path))?;
            partition.pending.clear();
        }
        Ok(())
    }

    /// Flush everything pending; called on graceful shutdown.
    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.flush_pending()
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    pub fn rollup(&self) -> &RollupStore {
        &self.rollup
    }

    pub fn reading_count(&self) -> usize {
        self.dedup.len()
    }

    /// Schools present in storage with their observed rooms.
    pub fn schools(&self) -> Vec<(String, Vec<String>)> {
        self.rooms_by_school
            .iter()
            .map(|(school, rooms)| {
                (
                    school.to_string(),
                    rooms.iter().map(|r| r.to_string()).collect(),
                )
            })
            .collect()
    }

    /// Readings with `from <= window_start < to`, ascending by
    /// `(window_start, node_id, window_seconds)`, resuming after
    /// `cursor`, at most `limit` items. Returns the page and the cursor
    /// for the next one (None when exhausted).
    pub fn query_readings(
        &self,
        school_id: &str,
        room_id: Option<&str>,
        from: i64,
        to: i64,
        cursor: Option<&Cursor>,
        limit: usize,
    ) -> (Vec<StoredReading>, Option<Cursor>) {
        let school: Arc<str> = Arc::from(school_id);
        let mut out = Vec::new();
        let mut next = None;
        let first_day = timeutil::floor_to(from, DAY_SECONDS);
        let last_day = timeutil::floor_to(to - 1, DAY_SECONDS);

        'days: for ((_, _), partition) in self
            .partitions
            .range((school.clone(), first_day)..=(school.clone(), last_day))
        {
            let lower: Bound<RowKey> = match cursor {
                Some(c) => Bound::Excluded((
                    c.window_start,
                    Arc::from(c.node_id.as_str()),
                    c.window_seconds,
                )),
                None => Bound::Included((from, Arc::from(""), 0)),
            };
            for ((ts, node, ws), row) in partition.rows.range((lower, Bound::Unbounded)) {
                if *ts >= to {
                    break;
                }
                if *ts < from {
                    continue;
                }
                if let Some(room) = room_id {
                    if &*row.room != room {
                        continue;
                    }
                }
                out.push(StoredReading {
                    reading: NoiseReading {
                        node_id: node.to_string(),
                        school_id: school_id.to_string(),
                        room_id: row.room.to_string(),
                        window_start: timeutil::from_epoch_seconds(*ts),
                        window_seconds: *ws,
                        metric: NOISE_METRIC.to_string(),
                        value: row.value,
                        sample_count: row.sample_count,
                    },
                    received_at: timeutil::from_epoch_seconds(row.received_at),
                });
                if out.len() == limit {
                    // Cursor names the last row returned; the next page
                    // resumes strictly after it.
                    next = Some(Cursor {
                        window_start: *ts,
                        node_id: node.to_string(),
                        window_seconds: *ws,
                    });
                    break 'days;
                }
            }
        }
        (out, next)
    }

    /// `(window_start, value)` of every reading in range for the scope,
    /// for report computations.
    pub fn values_in_range(
        &self,
        school_id: &str,
        room_id: Option<&str>,
        from: i64,
        to: i64,
    ) -> Vec<(DateTime<Utc>, f64)> {
        let school: Arc<str> = Arc::from(school_id);
        let mut out = Vec::new();
        if from >= to {
            return out;
        }
        let first_day = timeutil::floor_to(from, DAY_SECONDS);
        let last_day = timeutil::floor_to(to - 1, DAY_SECONDS);
        for ((_, _), partition) in self
            .partitions
            .range((school.clone(), first_day)..=(school, last_day))
        {
            for ((ts, _, _), row) in partition.rows.range((
                Bound::Included((from, Arc::from(""), 0u32)),
                Bound::Unbounded,
            )) {
                if *ts >= to {
                    break;
                }
                if let Some(room) = room_id {
                    if &*row.room != room {
                        continue;
                    }
                }
                out.push((timeutil::from_epoch_seconds(*ts), row.value));
            }
        }
        out
    }

    pub fn query_buckets(
        &self,
        school_id: &str,
        room_id: Option<&str>,
        granularity: Granularity,
        from: i64,
        to: i64,
    ) -> Vec<AggregateBucket> {
        let scope = match room_id {
            Some(r) => RoomScope::Room(Arc::from(r)),
            None => RoomScope::All,
        };
        self.rollup.query(school_id, &scope, granularity, from, to)
    }
}

/// Make an opaque id safe as a directory name: percent-encode anything
/// outside `[A-Za-z0-9._-]`.
fn sanitize_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'.' | b'_' | b'-' => out.push(b as char),
            other => out.push_str(&format!("%{other:02X}")),
        }
    }
    if out.is_empty() {
        out.push('_');
    }
    out
}
