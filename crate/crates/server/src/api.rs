//! HTTP/JSON API: reading ingest, raw and aggregate queries, exceedance
//! reports, and service introspection.
//!
//! Routes:
//! - `POST /v1/readings` — batch ingest, per-index rejection codes
//! - `GET  /v1/readings?school=&room=&from=&to=&cursor=&limit=`
//! - `GET  /v1/aggregates?school=&room=&granularity=&from=&to=`
//! - `GET  /v1/reports/exceedance?school=&room=&from=&to=&thresholds=`
//! - `GET  /v1/schools`
//! - `GET  /v1/stats`
//! - `GET  /v1/healthz`

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::Deserialize;
use serde_json::{json, Value};

use noisewatch_core::analytics::{
    exceedance_report, SchoolHours, STANDARD_THRESHOLDS,
};
use noisewatch_core::ingest::RejectCode;
use noisewatch_core::reading::NoiseReading;
use noisewatch_core::rollup::Granularity;
use noisewatch_core::timeutil;

use crate::store::{Cursor, Store};

pub struct AppState {
    pub store: RwLock<Store>,
    /// Per-school report hours from the fleet config.
    pub hours: HashMap<String, SchoolHours>,
    /// Fallback for schools that only exist in the data.
    pub default_hours: SchoolHours,
}

impl AppState {
    pub fn hours_for(&self, school: &str) -> &SchoolHours {
        self.hours.get(school).unwrap_or(&self.default_hours)
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/readings", post(post_readings).get(get_readings))
        .route("/v1/aggregates", get(get_aggregates))
        .route("/v1/reports/exceedance", get(get_exceedance))
        .route("/v1/schools", get(get_schools))
        .route("/v1/stats", get(get_stats))
        .with_state(state)
}

/// 400 with a JSON error body.
struct BadRequest(String);

impl IntoResponse for BadRequest {
    fn into_response(self) -> Response {
        (StatusCode::BAD_REQUEST, Json(json!({ "error": self.0 }))).into_response()
    }
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn post_readings(
    State(state): State<Shared>,
    body: axum::body::Bytes,
) -> Result<Json<Value>, BadRequest> {
    let items: Vec<Value> = serde_json::from_slice(&body)
        .map_err(|e| BadRequest(format!("body must be a JSON array of readings: {e}")))?;
    // Shape errors become per-index bad_value rejections; the batch as a
    // whole still processes.
    let batch: Vec<Result<NoiseReading, RejectCode>> = items
        .into_iter()
        .map(|v| serde_json::from_value::<NoiseReading>(v).map_err(|_| RejectCode::BadValue))
        .collect();
    let outcome = state
        .store
        .write()
        .ingest_batch(batch, Utc::now())
        .map_err(|e| BadRequest(format!("storage failure: {e}")))?;
    let rejected: Vec<Value> = outcome
        .rejected
        .iter()
        .map(|(index, code)| json!({ "index": index, "code": code.as_str() }))
        .collect();
    Ok(Json(json!({
        "accepted": outcome.accepted,
        "duplicates": outcome.duplicates,
        "rejected": rejected,
    })))
}

#[derive(Deserialize)]
struct ReadingsQuery {
    school: String,
    room: Option<String>,
    from: String,
    to: String,
    cursor: Option<String>,
    limit: Option<usize>,
}

const DEFAULT_PAGE: usize = 1_000;
const MAX_PAGE: usize = 10_000;

fn parse_range(from: &str, to: &str) -> Result<(DateTime<Utc>, DateTime<Utc>), BadRequest> {
    let from = timeutil::parse_utc(from).map_err(BadRequest)?;
    let to = timeutil::parse_utc(to).map_err(BadRequest)?;
    if from >= to {
        return Err(BadRequest("`from` must precede `to`".into()));
    }
    Ok((from, to))
}

fn decode_cursor(raw: &str) -> Result<Cursor, BadRequest> {
    let bytes = URL_SAFE_NO_PAD
        .decode(raw)
        .map_err(|_| BadRequest("malformed cursor".into()))?;
    serde_json::from_slice(&bytes).map_err(|_| BadRequest("malformed cursor".into()))
}

fn encode_cursor(cursor: &Cursor) -> String {
    URL_SAFE_NO_PAD.encode(serde_json::to_vec(cursor).expect("cursor serializes"))
}

async fn get_readings(
    State(state): State<Shared>,
    Query(q): Query<ReadingsQuery>,
) -> Result<Json<Value>, BadRequest> {
    let (from, to) = parse_range(&q.from, &q.to)?;
    let cursor = q.cursor.as_deref().map(decode_cursor).transpose()?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    let store = state.store.read();
    let (readings, next) = store.query_readings(
        &q.school,
        q.room.as_deref(),
        from.timestamp(),
        to.timestamp(),
        cursor.as_ref(),
        limit,
    );
    Ok(Json(json!({
        "readings": readings,
        "next_cursor": next.map(|c| encode_cursor(&c)),
    })))
}

#[derive(Deserialize)]
struct AggregatesQuery {
    school: String,
    room: Option<String>,
    granularity: String,
    from: String,
    to: String,
}

async fn get_aggregates(
    State(state): State<Shared>,
    Query(q): Query<AggregatesQuery>,
) -> Result<Json<Value>, BadRequest> {
    let granularity = Granularity::parse(&q.granularity).ok_or_else(|| {
        BadRequest("granularity must be one of five_min, hour, day".into())
    })?;
    let (from, to) = parse_range(&q.from, &q.to)?;
    let store = state.store.read();
    let buckets = store.query_buckets(
        &q.school,
        q.room.as_deref(),
        granularity,
        from.timestamp(),
        to.timestamp(),
    );
    let rows: Vec<Value> = buckets
        .iter()
        .map(|b| {
            json!({
                "bucket_start": timeutil::format_utc(b.bucket_start_utc()),
                "granularity": b.key.granularity.as_str(),
                "sample_count": b.stats.sample_count,
                "leq": b.leq(),
                "min_db": b.stats.min_db,
                "max_db": b.stats.max_db,
            })
        })
        .collect();
    Ok(Json(Value::Array(rows)))
}

#[derive(Deserialize)]
struct ExceedanceQuery {
    school: String,
    room: Option<String>,
    from: String,
    to: String,
    thresholds: Option<String>,
}

fn parse_thresholds(raw: Option<&str>) -> Result<Vec<f64>, BadRequest> {
    match raw {
        None => Ok(STANDARD_THRESHOLDS.to_vec()),
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| BadRequest(format!("bad threshold {s:?}")))
            })
            .collect(),
    }
}

async fn get_exceedance(
    State(state): State<Shared>,
    Query(q): Query<ExceedanceQuery>,
) -> Result<Json<Value>, BadRequest> {
    let (from, to) = parse_range(&q.from, &q.to)?;
    let thresholds = parse_thresholds(q.thresholds.as_deref())?;
    let hours = state.hours_for(&q.school).clone();
    let store = state.store.read();
    let values =
        store.values_in_range(&q.school, q.room.as_deref(), from.timestamp(), to.timestamp());
    drop(store);
    let report = exceedance_report(
        values,
        &q.school,
        q.room.as_deref().unwrap_or("ALL"),
        from,
        to,
        &thresholds,
        &hours,
    )
    .map_err(|e| BadRequest(e.to_string()))?;
    let body = match report {
        Some(r) => json!({
            "school": r.school_id,
            "room": r.room_id,
            "thresholds": r.thresholds,
            "fractions": r.fractions,
            "counts_above": r.counts_above,
            "sample_count": r.sample_count,
            "hours": hours.time_period_label(),
        }),
        None => json!({
            "school": q.school,
            "room": q.room.as_deref().unwrap_or("ALL"),
            "thresholds": thresholds,
            "fractions": Value::Null,
            "counts_above": Value::Null,
            "sample_count": 0,
            "hours": hours.time_period_label(),
        }),
    };
    Ok(Json(body))
}

async fn get_schools(State(state): State<Shared>) -> Json<Value> {
    let store = state.store.read();
    let mut by_id: HashMap<String, Vec<String>> = store.schools().into_iter().collect();
    drop(store);
    // Configured schools appear even before any data arrives.
    for school in state.hours.keys() {
        by_id.entry(school.clone()).or_default();
    }
    let mut ids: Vec<String> = by_id.keys().cloned().collect();
    ids.sort();
    let rows: Vec<Value> = ids
        .into_iter()
        .map(|school_id| {
            let hours = state.hours_for(&school_id);
            let days: Vec<&str> = hours
                .school_days
                .iter()
                .map(timeutil::weekday_name)
                .collect();
            json!({
                "school_id": school_id,
                "rooms": by_id[&school_id],
                "hours": {
                    "open": timeutil::format_hm(hours.open),
                    "close": timeutil::format_hm(hours.close),
                    "time_zone": hours.time_zone.name(),
                    "school_days": days,
                },
            })
        })
        .collect();
    Json(Value::Array(rows))
}

async fn get_stats(State(state): State<Shared>) -> Json<Value> {
    let stats = state.store.read().stats();
    Json(serde_json::to_value(stats).expect("stats serialize"))
}
