//! HTTP management API over a running simulation.
//!
//! Every success body is `{"revision": n, "data": ...}` where `revision` is
//! the store revision after the request. Errors are `{"error", "message"}`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use irs_core::checks::LocalCheckResult;
use irs_core::ladder::Strategy;
use irs_core::{Activation, DesiredState, RegionClass, ReportedState, Version};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::AgentState;
use crate::center::CenterError;
use crate::sim::{liveness_str, Simulation, Write};
use crate::store::FaultRecord;

pub type Shared = Arc<Mutex<Simulation>>;

pub fn router(sim: Shared) -> Router {
    Router::new()
        .route("/fleet", get(fleet))
        .route("/summary", get(summary))
        .route("/stations", post(register))
        .route("/stations/{id}", get(station))
        .route("/stations/{id}/config/{app}", put(configure))
        .route("/stations/{id}/assignments", post(assign))
        .route("/stations/{id}/actions", get(actions))
        .route("/stations/{id}/strategy", post(strategy))
        .route("/packages", post(publish))
        .route("/faults", get(faults))
        .with_state(sim)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<CenterError> for ApiError {
    fn from(e: CenterError) -> Self {
        use CenterError::*;
        let (status, code) = match &e {
            UnknownStation(_) => (StatusCode::NOT_FOUND, "UNKNOWN_STATION"),
            HardwareIdInUse { .. } => (StatusCode::CONFLICT, "HARDWARE_ID_IN_USE"),
            DuplicateVersionConflict { .. } => (StatusCode::CONFLICT, "DUPLICATE_VERSION_CONFLICT"),
            MalformedArchive(_) => (StatusCode::BAD_REQUEST, "MALFORMED_ARCHIVE"),
            UnknownPackage { .. } => (StatusCode::BAD_REQUEST, "UNKNOWN_PACKAGE"),
            DependencyUnsatisfiable(_) => (StatusCode::BAD_REQUEST, "DEPENDENCY_UNSATISFIABLE"),
            EmptyConfigKey => (StatusCode::BAD_REQUEST, "EMPTY_CONFIG_KEY"),
            UnassignedApp(_) => (StatusCode::BAD_REQUEST, "UNASSIGNED_APP"),
            UnknownLinkProfile(_) => (StatusCode::BAD_REQUEST, "UNKNOWN_LINK_PROFILE"),
            Pool(_) => (StatusCode::SERVICE_UNAVAILABLE, "NO_WORKER"),
            Snapshot(_) => (StatusCode::INTERNAL_SERVER_ERROR, "CORRUPT_SNAPSHOT"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn lock(sim: &Shared) -> MutexGuard<'_, Simulation> {
    sim.lock().unwrap_or_else(|p| p.into_inner())
}

fn envelope<T: Serialize>(sim: &Simulation, status: StatusCode, data: T) -> Response {
    (status, Json(json!({ "revision": sim.center.store.revision, "data": data }))).into_response()
}

#[derive(Serialize)]
struct StationView {
    logical_id: String,
    hardware_id: String,
    region_class: RegionClass,
    link_profile: String,
    liveness: &'static str,
    agent_state: Option<AgentState>,
    last_heartbeat: Option<f64>,
    drift: bool,
    pending_actions: usize,
    open_critical_faults: usize,
}

#[derive(Serialize)]
struct StationDetail {
    #[serde(flatten)]
    view: StationView,
    desired: DesiredState,
    reported: Option<ReportedState>,
    checks: Vec<LocalCheckResult>,
}

fn view(sim: &Simulation, id: &str) -> Result<StationView, ApiError> {
    let c = &sim.center;
    let rec = c
        .store
        .stations
        .get(id)
        .ok_or_else(|| ApiError::from(CenterError::UnknownStation(id.into())))?;
    let pending = c.actions_for(id)?.len();
    let open = c.open_critical_faults(Some(id));
    Ok(StationView {
        logical_id: id.into(),
        hardware_id: rec.identity.hardware_id.clone(),
        region_class: rec.identity.region_class,
        link_profile: rec.identity.link_profile.clone(),
        liveness: liveness_str(c.liveness_of(rec, sim.now())),
        agent_state: rec.agent_state,
        last_heartbeat: rec.last_heartbeat.map(|t| t.as_secs_f64()),
        drift: pending > 0,
        pending_actions: pending,
        open_critical_faults: open,
    })
}

async fn fleet(State(sim): State<Shared>) -> ApiResult {
    let sim = lock(&sim);
    let views = sim
        .center
        .store
        .stations
        .keys()
        .map(|id| view(&sim, id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(envelope(&sim, StatusCode::OK, views))
}

async fn summary(State(sim): State<Shared>) -> ApiResult {
    let sim = lock(&sim);
    let s = sim.center.fleet_summary(sim.now());
    Ok(envelope(&sim, StatusCode::OK, s))
}

async fn station(State(sim): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let sim = lock(&sim);
    let v = view(&sim, &id)?;
    let rec = &sim.center.store.stations[&id];
    let detail = StationDetail {
        view: v,
        desired: rec.desired.clone(),
        reported: rec.reported.clone(),
        checks: rec.checks.clone(),
    };
    Ok(envelope(&sim, StatusCode::OK, detail))
}

#[derive(Deserialize)]
struct RegisterBody {
    hardware_id: String,
    logical_id: String,
    link_profile: String,
    region_class: RegionClass,
}

async fn register(State(sim): State<Shared>, Json(b): Json<RegisterBody>) -> ApiResult {
    let mut sim = lock(&sim);
    sim.register_live(&b.hardware_id, &b.logical_id, &b.link_profile, b.region_class)?;
    let v = view(&sim, &b.logical_id)?;
    Ok(envelope(&sim, StatusCode::CREATED, v))
}

#[derive(Deserialize)]
struct ConfigBody {
    entries: BTreeMap<String, String>,
}

async fn configure(
    State(sim): State<Shared>,
    Path((id, app)): Path<(String, String)>,
    Json(b): Json<ConfigBody>,
) -> ApiResult {
    let mut sim = lock(&sim);
    sim.operator_write(Write::Configure {
        station: id.clone(),
        app: app.clone(),
        entries: b.entries,
    })?;
    let cfg = sim.desired(&id).and_then(|d| d.configs.get(&app)).cloned();
    Ok(envelope(&sim, StatusCode::OK, cfg))
}

#[derive(Deserialize)]
struct AssignBody {
    package: String,
    version: Version,
    #[serde(default = "active")]
    activation: Activation,
}

fn active() -> Activation {
    Activation::Active
}

async fn assign(State(sim): State<Shared>, Path(id): Path<String>, Json(b): Json<AssignBody>) -> ApiResult {
    let mut sim = lock(&sim);
    sim.operator_write(Write::Assign {
        station: id.clone(),
        package: b.package,
        version: b.version,
        activation: b.activation,
    })?;
    let desired = sim.desired(&id).cloned();
    Ok(envelope(&sim, StatusCode::OK, desired))
}

async fn actions(State(sim): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let sim = lock(&sim);
    let list = sim.center.actions_for(&id)?;
    Ok(envelope(&sim, StatusCode::OK, list))
}

#[derive(Deserialize)]
struct StrategyBody {
    strategy: String,
    #[serde(default)]
    subject: Option<String>,
}

async fn strategy(State(sim): State<Shared>, Path(id): Path<String>, Json(b): Json<StrategyBody>) -> ApiResult {
    let Some(level) = Strategy::parse(&b.strategy) else {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "INVALID_STRATEGY",
            format!("`{}` is not a recovery strategy", b.strategy),
        ));
    };
    let mut sim = lock(&sim);
    let v = view(&sim, &id)?;
    if v.liveness == "OFFLINE" {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "STATION_OFFLINE",
            format!("{id} is offline"),
        ));
    }
    let subject = b.subject.unwrap_or_else(|| "function".into());
    sim.operator_order(&id, level, &subject)?;
    Ok(envelope(
        &sim,
        StatusCode::ACCEPTED,
        json!({ "station": id, "strategy": level.as_str(), "subject": subject }),
    ))
}

async fn publish(State(sim): State<Shared>, body: Bytes) -> ApiResult {
    let mut sim = lock(&sim);
    let (name, version) = sim.center.publish_package(&body)?;
    Ok(envelope(&sim, StatusCode::CREATED, json!({ "name": name, "version": version })))
}

#[derive(Deserialize)]
struct FaultQuery {
    station: Option<String>,
    since: Option<u64>,
}

async fn faults(State(sim): State<Shared>, Query(q): Query<FaultQuery>) -> ApiResult {
    let sim = lock(&sim);
    let since = q.since.unwrap_or(0);
    let list: Vec<&FaultRecord> = sim
        .center
        .store
        .faults
        .iter()
        .filter(|f| f.seq > since && q.station.as_deref().is_none_or(|s| f.event.station == s))
        .collect();
    Ok(envelope(&sim, StatusCode::OK, list))
}
