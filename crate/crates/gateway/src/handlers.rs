use std::collections::{BTreeMap, HashMap};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::Json;
use dalton_core::bus::bridge::Health;
use dalton_core::hhi::hhi_series;
use dalton_core::model::{Annotation, AnnotationSource, CommandAction, PollutantKind, TimestampMs};
use dalton_core::pipeline::PipelineError;
use dalton_core::store::{FaultFilter, Role};
use serde::Deserialize;
use serde_json::json;

use crate::{ApiError, AppState, Endpoint, Session};

const DEFAULT_SPAN_MS: i64 = 2 * 3_600_000;

type Params = Query<HashMap<String, String>>;

fn int_param(q: &HashMap<String, String>, key: &str) -> Result<Option<i64>, ApiError> {
    q.get(key)
        .map(|v| v.parse::<i64>().map_err(|_| ApiError::bad_range(format!("{key} must be an integer"))))
        .transpose()
}

/// `[t0, t1)` from the query, defaulting to the last two hours.
fn range(q: &HashMap<String, String>, now: TimestampMs) -> Result<(TimestampMs, TimestampMs), ApiError> {
    let t1 = int_param(q, "t1")?.unwrap_or(now);
    let t0 = int_param(q, "t0")?.unwrap_or(t1 - DEFAULT_SPAN_MS);
    if t0 > t1 {
        return Err(ApiError::bad_range(format!("t0 {t0} is after t1 {t1}")));
    }
    Ok((t0, t1))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationIn {
    #[serde(default)]
    site_id: Option<String>,
    #[serde(default)]
    occupant_id: Option<String>,
    activity: String,
    start_ms: TimestampMs,
    #[serde(default)]
    end_ms: Option<TimestampMs>,
}

pub async fn post_annotation(
    State(st): State<AppState>,
    session: Session,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    session.require(Endpoint::PostAnnotation)?;
    let input: AnnotationIn = serde_json::from_slice(&body).map_err(|e| ApiError::invalid(e.to_string()))?;
    if input.activity.trim().is_empty() {
        return Err(ApiError::invalid("activity must not be empty"));
    }
    let site_id = match (&session.site_id, input.site_id) {
        (Some(own), Some(asked)) if session.role == Role::Occupant && *own != asked => {
            return Err(ApiError::forbidden(format!("occupant of {own} cannot annotate {asked}")))
        }
        (_, Some(s)) => s,
        (Some(own), None) => own.clone(),
        (None, None) => return Err(ApiError::invalid("site_id is required")),
    };
    let occupant_id = match session.role {
        Role::Occupant => session.user_id.clone(),
        _ => input.occupant_id.unwrap_or_else(|| session.user_id.clone()),
    };
    let a = Annotation {
        site_id,
        occupant_id,
        activity: input.activity,
        start_ms: input.start_ms,
        end_ms: input.end_ms,
        source: AnnotationSource::Api,
    };
    a.check().map_err(ApiError::invalid)?;
    st.store.append_annotation(&a).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((StatusCode::CREATED, Json(a)))
}

pub async fn list_devices(State(st): State<AppState>, session: Session) -> Result<impl IntoResponse, ApiError> {
    session.require(Endpoint::ListDevices)?;
    Ok(Json(st.pipeline.devices()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandIn {
    action: String,
    #[serde(default)]
    params: BTreeMap<String, String>,
}

pub async fn exec_command(
    State(st): State<AppState>,
    session: Session,
    Path(device_id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    session.require(Endpoint::ExecCommand)?;
    let input: CommandIn = serde_json::from_slice(&body).map_err(|e| ApiError::invalid(e.to_string()))?;
    let action: CommandAction = input.action.parse().map_err(ApiError::invalid)?;
    match st.pipeline.push_command(&device_id, action, input.params) {
        Ok(cmd) => Ok((StatusCode::ACCEPTED, Json(cmd))),
        Err(PipelineError::UnknownDevice(d)) => Err(ApiError::not_found(format!("unknown device {d}"))),
        Err(e) => Err(ApiError::internal(e.to_string())),
    }
}

pub async fn get_command(
    State(st): State<AppState>,
    session: Session,
    Path(cmd_id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    session.require(Endpoint::GetCommand)?;
    st.pipeline
        .command(&cmd_id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown command {cmd_id}")))
}

pub async fn get_series(
    State(st): State<AppState>,
    session: Session,
    Path(device_id): Path<String>,
    Query(q): Params,
) -> Result<impl IntoResponse, ApiError> {
    session.require(Endpoint::GetSeries)?;
    if !st.pipeline.knows_device(&device_id) {
        return Err(ApiError::not_found(format!("unknown device {device_id}")));
    }
    let kind: PollutantKind = q
        .get("kind")
        .ok_or_else(|| ApiError::invalid("kind is required"))?
        .parse()
        .map_err(|e: dalton_core::model::UnknownPollutant| ApiError::invalid(e.to_string()))?;
    let (t0, t1) = range(&q, st.pipeline.now_ms())?;
    let points: Vec<(TimestampMs, f64)> = st
        .store
        .query_series(&device_id, Some(kind), t0, t1)
        .iter()
        .filter_map(|r| r.get(kind).map(|v| (r.ts_ms, v)))
        .collect();
    Ok(Json(points))
}

pub async fn get_hhi(
    State(st): State<AppState>,
    session: Session,
    Path(site_id): Path<String>,
    Query(q): Params,
) -> Result<impl IntoResponse, ApiError> {
    session.require(Endpoint::GetHhi)?;
    let devices = st
        .pipeline
        .sites()
        .remove(&site_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown site {site_id}")))?;
    let (t0, t1) = range(&q, st.pipeline.now_ms())?;
    let data = st.store.query_site(&devices, t0, t1);
    let points = hhi_series(&data, &st.calibration).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(points))
}

pub async fn get_errors(
    State(st): State<AppState>,
    session: Session,
    Query(q): Params,
) -> Result<impl IntoResponse, ApiError> {
    session.require(Endpoint::GetErrors)?;
    let t0 = int_param(&q, "t0")?;
    let t1 = int_param(&q, "t1")?;
    if let (Some(a), Some(b)) = (t0, t1) {
        if a > b {
            return Err(ApiError::bad_range(format!("t0 {a} is after t1 {b}")));
        }
    }
    let device = q.get("device_id").cloned();
    let errors: Vec<_> = st
        .store
        .query_errors(t0.unwrap_or(i64::MIN), t1.unwrap_or(i64::MAX))
        .into_iter()
        .filter(|e| device.is_none() || e.device_id == device)
        .collect();
    let faults = st.store.query_faults(&FaultFilter {
        device_id: device,
        kind: None,
        t0,
        t1,
    });
    Ok(Json(json!({ "errors": errors, "faults": faults })))
}

pub async fn health(State(st): State<AppState>) -> impl IntoResponse {
    let status = match st.health.get() {
        Health::Ok => "OK",
        Health::Degraded => "DEGRADED",
    };
    Json(json!({ "status": status, "devices": st.pipeline.devices().len() }))
}
