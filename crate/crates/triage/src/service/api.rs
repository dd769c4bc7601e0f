//! Routes and handlers.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use migtriage_core::metrics::FieldImportance;
use migtriage_core::profile::FieldIssue;
use migtriage_core::{AnswerKind, EvaluationReport, ModelKind};
use serde::Serialize;
use serde_json::{json, Value};

use super::auth::{Endpoint, Role};
use super::config::ServiceConfig;
use super::jobs::{JobError, Jobs};
use super::payload::{parse_profile, profile_to_json};
use super::training::{assess_all, precheck, train_and_publish, AssessError, TrainRequest};
use crate::store::{RiskAssessment, Store, StoreError, SurveyRecord};
use crate::tips::{matching, SafetyTip};

pub const TOKEN_HEADER: &str = "x-role-token";
pub const PAGE_SIZE: usize = 10;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub config: Arc<ServiceConfig>,
    pub jobs: Arc<Jobs>,
}

impl AppState {
    pub fn open(config: ServiceConfig) -> Result<Self, StoreError> {
        let store = Store::open(&config.data_dir)?;
        Ok(Self {
            store: Arc::new(store),
            config: Arc::new(config),
            jobs: Arc::new(Jobs::default()),
        })
    }
}

/// Error body: `{"code": ..., "message": ...}`, plus `fields` for
/// validation failures.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub fields: Option<Vec<FieldIssue>>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            fields: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(fields) = self.fields {
            body["fields"] = json!(fields);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownModel(_) => ApiError::new(StatusCode::NOT_FOUND, "model_not_found", e.to_string()),
            _ => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "storage_unavailable", e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn authorize(state: &AppState, headers: &HeaderMap, endpoint: Endpoint) -> ApiResult<Role> {
    let token = headers
        .get(TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "missing X-Role-Token header"))?;
    let role = *state
        .config
        .tokens
        .get(token)
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "unknown role token"))?;
    if !endpoint.allows(role) {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            format!("role {} may not use this endpoint", role.as_str()),
        ));
    }
    Ok(role)
}

fn json_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn validation(err: migtriage_core::ValidationError) -> ApiError {
    ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        code: "validation_failed",
        message: err.to_string(),
        fields: Some(err.issues),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/surveys", post(submit_survey).get(list_surveys))
        .route("/api/models/train", post(train))
        .route("/api/jobs/{id}", get(job_status))
        .route("/api/models/{id}/report", get(model_report))
        .route("/api/models/{id}/assess", post(assess))
        .route("/api/analytics/summary", get(analytics))
        .route("/api/tips", get(tips))
        .route("/api/schema", get(schema))
        .route("/api/labels", post(labels))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

#[derive(Serialize)]
struct TipView<'a> {
    id: &'a str,
    text: &'a str,
    conditions: String,
}

fn tip_views<'a>(tips: impl IntoIterator<Item = &'a SafetyTip>) -> Vec<TipView<'a>> {
    tips.into_iter()
        .map(|t| TipView {
            id: &t.id,
            text: &t.text,
            conditions: t.conditions.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" AND "),
        })
        .collect()
}

async fn submit_survey(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<impl IntoResponse> {
    authorize(&state, &headers, Endpoint::SubmitSurvey)?;
    let payload: Value = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))?;
    let cfg = &state.config;
    let profile = parse_profile(&payload, &cfg.experiment.schema, &cfg.experiment.registry).map_err(validation)?;
    let tips = tip_views(matching(&cfg.tips, &profile));
    let store = state.store.clone();
    let version = cfg.experiment.schema.version().to_string();
    let record = tokio::task::spawn_blocking(move || store.submit(profile, &version))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(json!({ "id": record.id, "tips": tips }))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortOrder {
    Recency,
    RiskDesc,
}

/// Newest first, or flagged first then by score descending (unassessed
/// records last, ties by id).
pub fn sort_records<'a>(
    records: &'a [SurveyRecord],
    assessments: &BTreeMap<u64, RiskAssessment>,
    order: SortOrder,
) -> Vec<&'a SurveyRecord> {
    let mut out: Vec<&SurveyRecord> = records.iter().collect();
    match order {
        SortOrder::Recency => out.sort_by(|a, b| b.id.cmp(&a.id)),
        SortOrder::RiskDesc => out.sort_by(|a, b| {
            let key = |r: &SurveyRecord| assessments.get(&r.id).map(|x| (x.flagged, x.score));
            match (key(a), key(b)) {
                (Some((fa, sa)), Some((fb, sb))) => fb.cmp(&fa).then(sb.total_cmp(&sa)),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            }
            .then(a.id.cmp(&b.id))
        }),
    }
    out
}

/// Number of pages for `n` records; an empty store still has page 1.
pub fn page_count(n: usize) -> usize {
    n.div_ceil(PAGE_SIZE).max(1)
}

async fn list_surveys(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let role = authorize(&state, &headers, Endpoint::ListSurveys)?;
    let page: usize = match q.get("page") {
        None => 1,
        Some(p) => p
            .parse()
            .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "invalid_page", format!("invalid page \"{p}\"")))?,
    };
    let order = match q.get("sort").map(String::as_str) {
        None | Some("recency") => SortOrder::Recency,
        Some("risk_desc") => SortOrder::RiskDesc,
        Some(other) => return Err(ApiError::bad_request(format!("unknown sort \"{other}\""))),
    };
    let st = state.store.read();
    let pages = page_count(st.records.len());
    if page == 0 || page > pages {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_page",
            format!("page must be between 1 and {pages}"),
        ));
    }
    let schema = &state.config.experiment.schema;
    let items: Vec<Value> = sort_records(&st.records, &st.assessments, order)
        .into_iter()
        .skip((page - 1) * PAGE_SIZE)
        .take(PAGE_SIZE)
        .map(|r| {
            let mut profile = r.profile.clone();
            if !role.sees_free_text() {
                profile
                    .extended_answers
                    .retain(|id, _| !matches!(schema.question(id).map(|q| &q.answer_kind), Some(AnswerKind::FreeText)));
            }
            json!({
                "id": r.id,
                "submitted_at_ms": r.submitted_at_ms,
                "schema_version": r.schema_version,
                "profile": profile_to_json(&profile),
                "assessment": st.assessments.get(&r.id),
            })
        })
        .collect();
    Ok(Json(json!({
        "page": page,
        "page_size": PAGE_SIZE,
        "total": st.records.len(),
        "total_pages": pages,
        "items": items,
    })))
}

async fn train(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<impl IntoResponse> {
    authorize(&state, &headers, Endpoint::Train)?;
    let req: TrainRequest = json_body(&body)?;
    precheck(&state.store, &state.config.experiment, &req).map_err(|e| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "insufficient_data", e.to_string())
    })?;
    let id = state.jobs.start().map_err(|running| {
        ApiError::new(
            StatusCode::CONFLICT,
            "job_running",
            format!("training job {running} is still running"),
        )
    })?;
    let (store, config, jobs) = (state.store.clone(), state.config.clone(), state.jobs.clone());
    tokio::task::spawn_blocking(move || {
        let outcome = train_and_publish(&store, &config.experiment, &req).map_err(|e| JobError {
            stage: e.stage.to_string(),
            message: e.source.to_string(),
        });
        jobs.finish(id, outcome);
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "job_id": id, "status_url": format!("/api/jobs/{id}") })),
    ))
}

async fn job_status(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    authorize(&state, &headers, Endpoint::JobStatus)?;
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "job_not_found", format!("no job \"{id}\""));
    let n: u64 = id.parse().map_err(|_| not_found())?;
    let job = state.jobs.get(n).ok_or_else(not_found)?;
    Ok(Json(json!(job)))
}

#[derive(Serialize)]
struct ModelView {
    id: String,
    kind: ModelKind,
    schema_version: String,
    threshold: f64,
    report: EvaluationReport,
    importance: Vec<FieldImportance>,
}

fn model_view(state: &AppState, id: &str) -> ApiResult<ModelView> {
    let m = state.store.load_model(id)?;
    Ok(ModelView {
        id: m.id,
        kind: m.envelope.model.kind,
        schema_version: m.envelope.schema_version,
        threshold: m.envelope.model.threshold,
        report: m.report,
        importance: m.importance,
    })
}

async fn model_report(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    authorize(&state, &headers, Endpoint::ModelReport)?;
    let view = tokio::task::spawn_blocking(move || model_view(&state, &id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(json!(view)))
}

async fn assess(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    authorize(&state, &headers, Endpoint::Assess)?;
    let (store, config) = (state.store.clone(), state.config.clone());
    let outcome = tokio::task::spawn_blocking(move || assess_all(&store, &config.experiment, &id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| match e {
            AssessError::Store(s) => s.into(),
            AssessError::SchemaMismatch(m) => ApiError::new(StatusCode::CONFLICT, "schema_mismatch", m),
            other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "assessment_failed", other.to_string()),
        })?;
    Ok(Json(json!(outcome)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityRate {
    pub records: usize,
    pub flagged: usize,
    pub rate: f64,
}

/// Per-city record counts and the share flagged by the active model.
pub fn city_rates(
    records: &[SurveyRecord],
    assessments: &BTreeMap<u64, RiskAssessment>,
    active: Option<&str>,
) -> BTreeMap<String, CityRate> {
    let mut out: BTreeMap<String, CityRate> = BTreeMap::new();
    for r in records {
        let e = out.entry(r.profile.current_city.clone()).or_insert(CityRate {
            records: 0,
            flagged: 0,
            rate: 0.0,
        });
        e.records += 1;
        let flagged = assessments
            .get(&r.id)
            .is_some_and(|a| a.flagged && Some(a.model_id.as_str()) == active);
        if flagged {
            e.flagged += 1;
        }
    }
    for e in out.values_mut() {
        e.rate = e.flagged as f64 / e.records as f64;
    }
    out
}

async fn analytics(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    authorize(&state, &headers, Endpoint::Analytics)?;
    let (total, counts, rates, active) = {
        let st = state.store.read();
        let active = st.active_model.clone();
        let rates = city_rates(&st.records, &st.assessments, active.as_deref());
        let counts: BTreeMap<String, usize> = rates.iter().map(|(c, r)| (c.clone(), r.records)).collect();
        (st.records.len(), counts, rates, active)
    };
    let model = match active {
        Some(id) => Some(model_view(&state, &id)?),
        None => None,
    };
    Ok(Json(json!({
        "total_records": total,
        "counts_by_city": counts,
        "flagged_rate_by_city": rates,
        "active_model": model.as_ref().map(|m| json!({ "id": m.id, "kind": m.kind })),
        "importance": model.as_ref().map(|m| &m.importance),
        "report": model.as_ref().map(|m| &m.report),
    })))
}

async fn tips(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    authorize(&state, &headers, Endpoint::Tips)?;
    let cfg = &state.config;
    let Some(preview) = q.get("preview") else {
        return Ok(Json(json!({ "tips": tip_views(&cfg.tips) })));
    };
    let payload: Value =
        serde_json::from_str(preview).map_err(|e| ApiError::bad_request(format!("preview is not JSON: {e}")))?;
    let profile = parse_profile(&payload, &cfg.experiment.schema, &cfg.experiment.registry).map_err(validation)?;
    Ok(Json(json!({ "tips": tip_views(matching(&cfg.tips, &profile)) })))
}

async fn schema(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    authorize(&state, &headers, Endpoint::Schema)?;
    let exp = &state.config.experiment;
    Ok(Json(json!({
        "version": exp.schema.version(),
        "questions": exp.schema.questions(),
        "cities": exp.registry.cities(),
    })))
}

async fn labels(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Value>> {
    authorize(&state, &headers, Endpoint::Labels)?;
    #[derive(serde::Deserialize, Default)]
    #[serde(deny_unknown_fields)]
    struct Body {
        labels: BTreeMap<u64, bool>,
    }
    let body: Body = json_body(&body)?;
    if body.labels.is_empty() {
        return Err(ApiError::bad_request("no labels given"));
    }
    {
        let st = state.store.read();
        let unknown: Vec<String> = body
            .labels
            .keys()
            .filter(|id| st.record(**id).is_none())
            .map(|id| id.to_string())
            .collect();
        if !unknown.is_empty() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "unknown_record",
                format!("no records with ids {}", unknown.join(", ")),
            ));
        }
    }
    let n = body.labels.len();
    let store = state.store.clone();
    tokio::task::spawn_blocking(move || store.add_labels(body.labels))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(json!({ "labeled": n })))
}
