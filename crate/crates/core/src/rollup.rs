//! Multi-granularity aggregates (5-minute, hour, day) over readings.
//!
//! Buckets store the linear-domain energy sum rather than dB means, so
//! combining buckets is exact, associative and commutative, and late
//! readings fold in with no re-reading of history. Each reading updates
//! six buckets: three granularities for its room scope and three for the
//! school-wide "ALL" scope (rooms weighted by sample count).

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::leq::{db_to_energy, energy_to_db};
use crate::timeutil;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RollupError {
    #[error("cannot combine buckets with different scope/granularity/start")]
    ScopeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Granularity {
    FiveMin,
    Hour,
    Day,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::FiveMin, Granularity::Hour, Granularity::Day];

    pub fn seconds(self) -> i64 {
        match self {
            Granularity::FiveMin => 300,
            Granularity::Hour => 3_600,
            Granularity::Day => 86_400,
        }
    }

    pub fn bucket_start(self, ts: i64) -> i64 {
        timeutil::floor_to(ts, self.seconds())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::FiveMin => "five_min",
            Granularity::Hour => "hour",
            Granularity::Day => "day",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "five_min" => Some(Granularity::FiveMin),
            "hour" => Some(Granularity::Hour),
            "day" => Some(Granularity::Day),
            _ => None,
        }
    }
}

/// Room-level scope or the school-wide aggregate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RoomScope {
    All,
    Room(Arc<str>),
}

impl RoomScope {
    pub fn as_str(&self) -> &str {
        match self {
            RoomScope::All => "ALL",
            RoomScope::Room(r) => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BucketKey {
    pub school_id: Arc<str>,
    pub room: RoomScope,
    pub granularity: Granularity,
    pub bucket_start: i64,
}

/// The additive part of a bucket. `Default` is the fold identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketStats {
    pub sample_count: u64,
    /// Sum of `sample_count · 10^(value/10)` over contributing readings.
    pub energy_sum: f64,
    pub min_db: f64,
    pub max_db: f64,
}

impl Default for BucketStats {
    fn default() -> Self {
        Self {
            sample_count: 0,
            energy_sum: 0.0,
            min_db: f64::INFINITY,
            max_db: f64::NEG_INFINITY,
        }
    }
}

impl BucketStats {
    pub fn from_reading(value_db: f64, sample_count: u32) -> Self {
        Self {
            sample_count: u64::from(sample_count),
            energy_sum: f64::from(sample_count) * db_to_energy(value_db),
            min_db: value_db,
            max_db: value_db,
        }
    }

    pub fn merge(&mut self, other: &BucketStats) {
        self.sample_count += other.sample_count;
        self.energy_sum += other.energy_sum;
        self.min_db = self.min_db.min(other.min_db);
        self.max_db = self.max_db.max(other.max_db);
    }

    pub fn is_empty(&self) -> bool {
        self.sample_count == 0
    }

    /// Sample-count-weighted Leq of everything folded in.
    pub fn leq(&self) -> f64 {
        energy_to_db(self.energy_sum / self.sample_count as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateBucket {
    pub key: BucketKey,
    pub stats: BucketStats,
}

impl AggregateBucket {
    /// Identity element for folds over a bucket slot.
    pub fn empty(key: BucketKey) -> Self {
        Self {
            key,
            stats: BucketStats::default(),
        }
    }

    pub fn bucket_start_utc(&self) -> DateTime<Utc> {
        timeutil::from_epoch_seconds(self.key.bucket_start)
    }

    pub fn leq(&self) -> f64 {
        self.stats.leq()
    }
}

/// Combine two buckets covering the same slot. Counts and energies add,
/// extrema take min/max; Leq is rederived from the sums.
pub fn combine(a: &AggregateBucket, b: &AggregateBucket) -> Result<AggregateBucket, RollupError> {
    if a.key != b.key {
        return Err(RollupError::ScopeMismatch);
    }
    let mut stats = a.stats;
    stats.merge(&b.stats);
    Ok(AggregateBucket {
        key: a.key.clone(),
        stats,
    })
}

/// Recompute one bucket from scratch over `(window_start, value,
/// sample_count)` readings already scoped to the bucket's school/room.
/// Readings whose window falls outside the bucket are ignored. `None`
/// when nothing falls inside.
pub fn rebuild_bucket(
    key: &BucketKey,
    readings: impl IntoIterator<Item = (i64, f64, u32)>,
) -> Option<AggregateBucket> {
    let mut stats = BucketStats::default();
    for (ts, value, count) in readings {
        if key.granularity.bucket_start(ts) == key.bucket_start {
            stats.merge(&BucketStats::from_reading(value, count));
        }
    }
    if stats.is_empty() {
        None
    } else {
        Some(AggregateBucket {
            key: key.clone(),
            stats,
        })
    }
}

/// In-memory incremental bucket store. Ordered keys make range queries
/// over `(school, room, granularity, time)` sequential.
#[derive(Debug, Default)]
pub struct RollupStore {
    buckets: BTreeMap<BucketKey, BucketStats>,
}

impl RollupStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// Fold one inserted reading into its six covering buckets
    /// (3 granularities × {room, ALL}). Call exactly once per reading
    /// accepted by ingest — deduplication happens upstream.
    pub fn apply_reading(
        &mut self,
        school_id: &Arc<str>,
        room_id: &Arc<str>,
        window_start: i64,
        value_db: f64,
        sample_count: u32,
    ) -> Vec<BucketKey> {
        let delta = BucketStats::from_reading(value_db, sample_count);
        let mut touched = Vec::with_capacity(6);
        for granularity in Granularity::ALL {
            for room in [RoomScope::Room(room_id.clone()), RoomScope::All] {
                let key = BucketKey {
                    school_id: school_id.clone(),
                    room,
                    granularity,
                    bucket_start: granularity.bucket_start(window_start),
                };
                self.buckets.entry(key.clone()).or_default().merge(&delta);
                touched.push(key);
            }
        }
        touched
    }

    pub fn get(&self, key: &BucketKey) -> Option<AggregateBucket> {
        self.buckets.get(key).map(|stats| AggregateBucket {
            key: key.clone(),
            stats: *stats,
        })
    }

    /// Buckets for one scope and granularity with `from <= start < to`,
    /// ascending by start.
    pub fn query(
        &self,
        school_id: &str,
        room: &RoomScope,
        granularity: Granularity,
        from_ts: i64,
        to_ts: i64,
    ) -> Vec<AggregateBucket> {
        if from_ts >= to_ts {
            return Vec::new();
        }
        let school: Arc<str> = Arc::from(school_id);
        let lo = BucketKey {
            school_id: school.clone(),
            room: room.clone(),
            granularity,
            bucket_start: granularity.bucket_start(from_ts),
        };
        let hi = BucketKey {
            school_id: school,
            room: room.clone(),
            granularity,
            bucket_start: to_ts,
        };
        self.buckets
            .range(lo..hi)
            .filter(|(k, _)| k.bucket_start >= from_ts)
            .map(|(k, stats)| AggregateBucket {
                key: k.clone(),
                stats: *stats,
            })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BucketKey, &BucketStats)> {
        self.buckets.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(school: &str, room: Option<&str>, g: Granularity, start: i64) -> BucketKey {
        BucketKey {
            school_id: Arc::from(school),
            room: match room {
                Some(r) => RoomScope::Room(Arc::from(r)),
                None => RoomScope::All,
            },
            granularity: g,
            bucket_start: start,
        }
    }

    fn bucket(k: BucketKey, value: f64, count: u32) -> AggregateBucket {
        AggregateBucket {
            key: k,
            stats: BucketStats::from_reading(value, count),
        }
    }

    #[test]
    fn combine_identity() {
        let k = key("s", Some("r"), Granularity::Hour, 3_600);
        let x = bucket(k.clone(), 64.0, 300);
        let combined = combine(&x, &AggregateBucket::empty(k)).unwrap();
        assert_eq!(combined.stats.sample_count, x.stats.sample_count);
        assert_eq!(combined.stats.energy_sum, x.stats.energy_sum);
        assert_eq!(combined.stats.min_db, x.stats.min_db);
        assert_eq!(combined.stats.max_db, x.stats.max_db);
    }

    #[test]
    fn combine_equal_counts_of_60_and_70() {
        let k = key("s", Some("r"), Granularity::Hour, 0);
        let a = bucket(k.clone(), 60.0, 1);
        let b = bucket(k.clone(), 70.0, 1);
        let c = combine(&a, &b).unwrap();
        assert_eq!(c.stats.sample_count, 2);
        assert!((c.leq() - 67.40).abs() < 0.01, "got {}", c.leq());
        assert_eq!(c.stats.min_db, 60.0);
        assert_eq!(c.stats.max_db, 70.0);
    }

    #[test]
    fn combine_rejects_mismatched_keys() {
        let a = bucket(key("s", Some("r1"), Granularity::Hour, 0), 60.0, 1);
        let b = bucket(key("s", Some("r2"), Granularity::Hour, 0), 70.0, 1);
        assert_eq!(combine(&a, &b), Err(RollupError::ScopeMismatch));
    }

    #[test]
    fn rebuild_absent_without_readings() {
        let k = key("s", Some("r"), Granularity::Hour, 0);
        assert_eq!(rebuild_bucket(&k, Vec::<(i64, f64, u32)>::new()), None);
        // A reading outside the bucket is ignored.
        assert_eq!(rebuild_bucket(&k, vec![(7_200, 60.0, 10)]), None);
    }

    #[test]
    fn singleton_reading_lifts_to_bucket() {
        let k = key("s", Some("r"), Granularity::Hour, 8 * 3_600);
        let b = rebuild_bucket(&k, vec![(8 * 3_600, 62.5, 300)]).unwrap();
        assert_eq!(b.stats.sample_count, 300);
        assert!((b.leq() - 62.5).abs() < 1e-9);
        assert_eq!(b.stats.min_db, 62.5);
        assert_eq!(b.stats.max_db, 62.5);
    }

    #[test]
    fn hour_bucket_equals_fold_of_its_five_minute_readings() {
        let readings: Vec<(i64, f64, u32)> = (0..12)
            .map(|i| (i * 300, 55.0 + i as f64, 300))
            .collect();
        let hour = rebuild_bucket(
            &key("s", Some("r"), Granularity::Hour, 0),
            readings.clone(),
        )
        .unwrap();

        let mut acc = AggregateBucket::empty(key("s", Some("r"), Granularity::Hour, 0));
        for (ts, v, c) in readings {
            let single = rebuild_bucket(
                &key("s", Some("r"), Granularity::Hour, 0),
                vec![(ts, v, c)],
            )
            .unwrap();
            acc = combine(&acc, &single).unwrap();
        }
        assert_eq!(hour.stats.sample_count, acc.stats.sample_count);
        assert!((hour.stats.energy_sum - acc.stats.energy_sum).abs() <= 1e-9 * acc.stats.energy_sum);
        assert_eq!(hour.stats.min_db, acc.stats.min_db);
        assert_eq!(hour.stats.max_db, acc.stats.max_db);
    }

    #[test]
    fn apply_reading_touches_six_buckets() {
        let mut store = RollupStore::new();
        let school: Arc<str> = Arc::from("s");
        let room: Arc<str> = Arc::from("r");
        let touched = store.apply_reading(&school, &room, 8 * 3_600 + 300, 64.0, 300);
        assert_eq!(touched.len(), 6);
        assert_eq!(store.len(), 6);
        let day = store
            .get(&key("s", None, Granularity::Day, 0))
            .expect("day ALL bucket");
        assert!((day.leq() - 64.0).abs() < 1e-9);
    }

    #[test]
    fn query_is_start_inclusive_end_exclusive_and_sorted() {
        let mut store = RollupStore::new();
        let school: Arc<str> = Arc::from("s");
        let room: Arc<str> = Arc::from("r");
        for i in 0..24 {
            store.apply_reading(&school, &room, i * 3_600, 60.0, 60);
        }
        let hours = store.query("s", &RoomScope::Room(room.clone()), Granularity::Hour, 0, 86_400);
        assert_eq!(hours.len(), 24);
        assert!(hours
            .windows(2)
            .all(|w| w[0].key.bucket_start < w[1].key.bucket_start));
        let partial = store.query(
            "s",
            &RoomScope::Room(room),
            Granularity::Hour,
            3 * 3_600,
            6 * 3_600,
        );
        assert_eq!(partial.len(), 3);
        assert_eq!(partial[0].key.bucket_start, 3 * 3_600);

        let days = store.query("s", &RoomScope::All, Granularity::Day, 0, 86_400);
        assert_eq!(days.len(), 1);
    }

    #[test]
    fn invariant_min_leq_max() {
        let mut stats = BucketStats::from_reading(55.0, 10);
        stats.merge(&BucketStats::from_reading(71.0, 25));
        stats.merge(&BucketStats::from_reading(40.0, 3));
        assert!(stats.min_db <= stats.leq() && stats.leq() <= stats.max_db);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_stats() -> impl Strategy<Value = BucketStats> {
            (20.0f64..110.0, 1u32..2_000).prop_map(|(v, c)| BucketStats::from_reading(v, c))
        }

        proptest! {
            #[test]
            fn merge_is_commutative(a in arb_stats(), b in arb_stats()) {
                let mut ab = a; ab.merge(&b);
                let mut ba = b; ba.merge(&a);
                prop_assert_eq!(ab.sample_count, ba.sample_count);
                prop_assert!((ab.energy_sum - ba.energy_sum).abs() <= 1e-9 * ab.energy_sum);
                prop_assert_eq!(ab.min_db, ba.min_db);
                prop_assert_eq!(ab.max_db, ba.max_db);
            }

            #[test]
            fn fold_order_does_not_matter(mut parts in proptest::collection::vec(arb_stats(), 2..20)) {
                let mut forward = BucketStats::default();
                for p in &parts { forward.merge(p); }
                parts.reverse();
                let mut backward = BucketStats::default();
                for p in &parts { backward.merge(p); }
                prop_assert!((forward.leq() - backward.leq()).abs() < 1e-9);
                prop_assert_eq!(forward.sample_count, backward.sample_count);
            }

            #[test]
            fn min_leq_max_holds(parts in proptest::collection::vec(arb_stats(), 1..20)) {
                let mut acc = BucketStats::default();
                for p in &parts { acc.merge(p); }
                prop_assert!(acc.min_db <= acc.leq() + 1e-12);
                prop_assert!(acc.leq() <= acc.max_db + 1e-12);
            }
        }
    }
}
