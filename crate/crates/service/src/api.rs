//! HTTP routes over a shared [`Hub`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{ConnectInfo, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::{URL_SAFE, URL_SAFE_NO_PAD};
use base64::Engine;
use hub_core::broker::BrokerError;
use hub_core::engine::ActionRequest;
use hub_core::hub::{AuthorizeInput, AuthorizeOutcome, Hub, HubError};
use hub_core::manifest::{parse, AccessPattern, Manifest};
use hub_core::policy::{Constraint, Decision, LogFilter, PolicyError};
use hub_core::scheduler::{Activation, Schedule};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::clock::Clock;
use crate::ratelimit::RateLimiter;

pub const SESSION_HEADER: &str = "x-hub-session";

#[derive(Clone)]
pub struct AppState {
    pub hub: Arc<Hub>,
    pub clock: Arc<dyn Clock>,
    pub limiter: Arc<RateLimiter>,
    pub secret: Arc<String>,
}

pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({"error": error, "message": message.into()}),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<HubError> for ApiError {
    fn from(e: HubError) -> Self {
        use StatusCode as S;
        let msg = e.to_string();
        match e {
            HubError::Parse(p) => Self {
                status: S::BAD_REQUEST,
                body: json!({"error": "invalid_manifest", "message": msg, "diagnostics": [p.to_string()]}),
            },
            HubError::Invalid(d) => Self {
                status: S::BAD_REQUEST,
                body: json!({"error": "invalid_manifest", "message": msg, "diagnostics": d}),
            },
            HubError::BadRequest(_) => Self::new(S::BAD_REQUEST, "invalid_request", msg),
            HubError::UnknownGrant(_) | HubError::UnknownManifest(_) => Self::new(S::NOT_FOUND, "not_found", msg),
            HubError::Broker(b) => match b {
                BrokerError::UnknownCode
                | BrokerError::PkceMismatch
                | BrokerError::CodeReplayed
                | BrokerError::ExpiredCode => Self::new(S::BAD_REQUEST, "invalid_grant", msg),
                BrokerError::ClientMismatch => Self::new(S::UNAUTHORIZED, "invalid_client", msg),
                BrokerError::UnknownGrant(_) => Self::new(S::NOT_FOUND, "not_found", msg),
                BrokerError::BadSchedule(_) | BrokerError::UnknownManifest(_) => {
                    Self::new(S::BAD_REQUEST, "invalid_request", msg)
                }
                BrokerError::UnknownAuthRequest | BrokerError::StateMismatch => {
                    Self::new(S::BAD_GATEWAY, "provider_error", msg)
                }
                _ => Self::new(S::INTERNAL_SERVER_ERROR, "internal", msg),
            },
            HubError::Policy(p) => match p {
                PolicyError::UnknownGrant(_) => Self::new(S::NOT_FOUND, "not_found", msg),
                PolicyError::NotPending(_) => Self::new(S::CONFLICT, "not_pending", msg),
                _ => Self::new(S::BAD_REQUEST, "invalid_constraint", msg),
            },
            HubError::Provider(_) => Self::new(S::BAD_GATEWAY, "provider_error", msg),
            HubError::Storage(_) => Self::new(S::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

fn limited(state: &AppState, client_id: &str) -> ApiResult<()> {
    if state.limiter.check(client_id) {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::TOO_MANY_REQUESTS, "rate_limited", "too many requests"))
    }
}

pub fn router(state: AppState) -> Router {
    let manage = Router::new()
        .route("/grants", get(list_grants).post(create_grant))
        .route("/grants/{id}", get(grant_detail).delete(revoke_grant))
        .route("/grants/{id}/decision", post(decide))
        .route("/grants/{id}/constraints", post(set_constraints))
        .route("/grants/{id}/preview", get(preview))
        .route("/logs", get(logs))
        .route_layer(middleware::from_fn_with_state(state.clone(), console_only));
    Router::new()
        .route("/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/authorize", get(authorize))
        .route("/token", post(token))
        .route("/query", post(query))
        .nest("/manage", manage)
        .with_state(state)
}

fn same_secret(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn console_only(
    State(state): State<AppState>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    req: Request,
    next: Next,
) -> Response {
    let presented = req
        .headers()
        .get(SESSION_HEADER)
        .map(|v| v.as_bytes())
        .unwrap_or_default();
    if !peer.ip().is_loopback() || !same_secret(presented, state.secret.as_bytes()) {
        return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "console session required").into_response();
    }
    next.run(req).await
}

#[derive(Deserialize)]
struct AuthorizeParams {
    client_id: String,
    manifest: String,
    redirect_uri: String,
    state: String,
    code_challenge: String,
    access_type: String,
    #[serde(default)]
    schedule: Option<String>,
    #[serde(default)]
    provider: Option<String>,
    #[serde(default)]
    endpoint: Option<String>,
}

/// The provider a manifest reads from or writes to.
pub fn manifest_provider(m: &Manifest) -> Option<String> {
    m.stages()
        .find_map(|op| op.str_param("resourceType"))
        .map(str::to_string)
}

fn decode_manifest(encoded: &str) -> ApiResult<String> {
    let trimmed = encoded.trim_end_matches('=');
    let bytes = URL_SAFE_NO_PAD
        .decode(trimmed)
        .or_else(|_| URL_SAFE.decode(encoded))
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", format!("manifest is not base64: {e}")))?;
    String::from_utf8(bytes)
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", "manifest is not UTF-8"))
}

fn authorize_input(p: AuthorizeParams) -> ApiResult<AuthorizeInput> {
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", m);
    let manifest_text = decode_manifest(&p.manifest)?;
    let access_type: AccessPattern = p.access_type.parse().map_err(bad)?;
    let schedule = match p.schedule.as_deref().filter(|s| !s.is_empty()) {
        Some(s) => Some(Schedule::from_param(s).ok_or_else(|| bad(format!("bad schedule `{s}`")))?),
        None => None,
    };
    let provider_id = match p.provider.filter(|s| !s.is_empty()) {
        Some(id) => id,
        None => {
            let m = parse(&manifest_text).map_err(HubError::from)?;
            manifest_provider(&m).ok_or_else(|| bad("manifest names no resource type".into()))?
        }
    };
    Ok(AuthorizeInput {
        client_id: p.client_id,
        provider_id,
        manifest_text,
        redirect_uri: p.redirect_uri,
        state: p.state,
        code_challenge: p.code_challenge,
        access_type,
        schedule,
        endpoint: p.endpoint,
    })
}

fn outcome_response(outcome: AuthorizeOutcome) -> Response {
    match outcome {
        AuthorizeOutcome::Redirect { location, .. } => {
            (StatusCode::FOUND, [(header::LOCATION, location)]).into_response()
        }
        pending @ AuthorizeOutcome::Pending { .. } => (StatusCode::ACCEPTED, Json(pending)).into_response(),
    }
}

async fn authorize(State(state): State<AppState>, Query(params): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let params: AuthorizeParams = serde_json::from_value(json!(params))
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))?;
    limited(&state, &params.client_id)?;
    let input = authorize_input(params)?;
    let now = state.clock.now();
    let hub = state.hub.clone();
    let outcome = blocking(move || hub.authorize(input, now)).await??;
    Ok(outcome_response(outcome))
}

#[derive(Deserialize)]
struct TokenRequest {
    grant_type: String,
    code: String,
    code_verifier: String,
    client_id: String,
    #[serde(default)]
    endpoint: Option<String>,
}

async fn token(State(state): State<AppState>, body: Json<Value>) -> ApiResult<Response> {
    let req: TokenRequest = serde_json::from_value(body.0)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))?;
    if req.grant_type != "authorization_code" {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "unsupported_grant_type", req.grant_type));
    }
    limited(&state, &req.client_id)?;
    let now = state.clock.now();
    let hub = state.hub.clone();
    let (resp, activation) = blocking(move || {
        hub.exchange_token(&req.code, &req.code_verifier, &req.client_id, req.endpoint.as_deref(), now)
    })
    .await??;
    if activation == Activation::RunOnce {
        let hub = state.hub.clone();
        let grant_id = resp.grant_id.clone();
        let clock = state.clock.clone();
        tokio::spawn(async move {
            // let the token response reach the app first
            tokio::task::yield_now().await;
            let _ = tokio::task::spawn_blocking(move || hub.run_install(&grant_id, clock.now())).await;
        });
    }
    Ok(Json(resp).into_response())
}

#[derive(Deserialize)]
struct QueryRequest {
    token: String,
    manifest_id: String,
    #[serde(default)]
    request: Option<ActionRequest>,
}

async fn query(State(state): State<AppState>, body: Json<Value>) -> ApiResult<Response> {
    let req: QueryRequest = serde_json::from_value(body.0)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))?;
    let client = state.hub.client_for_token(&req.token).unwrap_or_default();
    limited(&state, &client)?;
    let now = state.clock.now();
    let hub = state.hub.clone();
    let result = blocking(move || hub.query(&req.token, &req.manifest_id, req.request, now)).await?;
    Ok(match result {
        Ok(resp) => Json(resp).into_response(),
        Err(failure) => {
            let status = StatusCode::from_u16(failure.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            let mut body = serde_json::to_value(&failure).unwrap_or_default();
            if failure.reason.is_some() {
                body["status"] = json!("denied");
            }
            (status, Json(body)).into_response()
        }
    })
}

async fn list_grants(State(state): State<AppState>) -> Json<Value> {
    Json(json!({"grants": state.hub.grants()}))
}

async fn create_grant(State(state): State<AppState>, Json(input): Json<AuthorizeInput>) -> ApiResult<Response> {
    let now = state.clock.now();
    let hub = state.hub.clone();
    let outcome = blocking(move || hub.authorize(input, now)).await??;
    Ok((StatusCode::CREATED, Json(outcome)).into_response())
}

async fn grant_detail(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let detail = state.hub.grant_detail(&id)?;
    Ok(Json(detail).into_response())
}

async fn revoke_grant(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let grant = state.hub.revoke(&id, state.clock.now())?;
    Ok(Json(grant).into_response())
}

#[derive(Deserialize)]
struct DecisionBody {
    decision: Decision,
    #[serde(default)]
    constraints: Vec<Constraint>,
}

async fn decide(State(state): State<AppState>, Path(id): Path<String>, Json(body): Json<DecisionBody>) -> ApiResult<Response> {
    let location = state.hub.decide(&id, body.decision, body.constraints, state.clock.now())?;
    Ok(Json(json!({"grant_id": id, "location": location})).into_response())
}

#[derive(Deserialize)]
struct ConstraintsBody {
    constraints: Vec<Constraint>,
}

async fn set_constraints(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<ConstraintsBody>,
) -> ApiResult<Response> {
    let grant = state.hub.set_constraints(&id, body.constraints)?;
    Ok(Json(grant).into_response())
}

async fn preview(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let now = state.clock.now();
    let hub = state.hub.clone();
    let preview = blocking(move || hub.preview(&id, now)).await??;
    Ok(Json(preview).into_response())
}

async fn logs(State(state): State<AppState>, Query(filter): Query<LogFilter>) -> Json<Value> {
    Json(json!({"entries": state.hub.logs(&filter)}))
}
