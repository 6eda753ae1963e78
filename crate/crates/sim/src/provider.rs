//! Fixture-backed resource provider with OAuth (code + PKCE + refresh),
//! a query endpoint and a journaled write endpoint. The same state serves
//! HTTP and in-process callers.

use std::collections::{HashMap, HashSet};
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, TimeDelta, Utc};
use hub_core::broker::{pkce, PkceChallenge, ProviderTokenSet};
use hub_core::engine::{ActionRequest, ProviderError};
use hub_core::hub::Connector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use tokio::task::JoinHandle;

use crate::fixture::Fixture;
use crate::graphql::{execute, parse_query};
use crate::schema::{schema, ProviderSchema, SchemaError};

pub const TOKEN_TTL_SECONDS: i64 = 3600;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    pub status: u16,
    pub message: String,
}

fn reject(status: u16, message: impl Into<String>) -> Reject {
    Reject {
        status,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: usize,
    pub action: String,
    pub resource_type: String,
    pub request: ActionRequest,
    pub record_id: String,
}

#[derive(Debug, Deserialize)]
pub struct TokenRequest {
    pub grant_type: String,
    #[serde(default)]
    pub code: Option<String>,
    #[serde(default)]
    pub code_verifier: Option<String>,
    #[serde(default)]
    pub refresh_token: Option<String>,
    #[serde(default)]
    pub client_id: Option<String>,
    #[serde(default)]
    pub redirect_uri: Option<String>,
}

struct PendingCode {
    challenge: String,
    client_id: String,
    redirect_uri: String,
}

#[derive(Default)]
struct Inner {
    records: Vec<Value>,
    codes: HashMap<String, PendingCode>,
    access: HashSet<String>,
    refresh: HashSet<String>,
    journal: Vec<JournalEntry>,
    pulls: usize,
    next_id: usize,
}

pub struct MockProvider {
    schema: ProviderSchema,
    inner: Mutex<Inner>,
}

impl MockProvider {
    pub fn new(fixture: &Fixture) -> Result<Self, SchemaError> {
        let schema = schema(&fixture.provider_id)?;
        schema.validate(&fixture.records)?;
        Ok(Self {
            schema,
            inner: Mutex::new(Inner {
                records: fixture.records.clone(),
                next_id: fixture.records.len(),
                ..Inner::default()
            }),
        })
    }

    pub fn provider_id(&self) -> &str {
        self.schema.provider_id
    }

    pub fn schema(&self) -> &ProviderSchema {
        &self.schema
    }

    pub fn records(&self) -> Vec<Value> {
        self.inner.lock().unwrap().records.clone()
    }

    pub fn journal(&self) -> Vec<JournalEntry> {
        self.inner.lock().unwrap().journal.clone()
    }

    pub fn pull_count(&self) -> usize {
        self.inner.lock().unwrap().pulls
    }

    /// Issues a code bound to the challenge; returns `(code, redirect location)`.
    pub fn authorize(
        &self,
        client_id: &str,
        redirect_uri: &str,
        state: &str,
        code_challenge: &str,
        method: &str,
    ) -> Result<(String, String), Reject> {
        if method != "S256" {
            return Err(reject(400, "only S256 challenges are accepted"));
        }
        if code_challenge.is_empty() || redirect_uri.is_empty() {
            return Err(reject(400, "code_challenge and redirect_uri are required"));
        }
        let code = pkce::random_token(16);
        self.inner.lock().unwrap().codes.insert(
            code.clone(),
            PendingCode {
                challenge: code_challenge.into(),
                client_id: client_id.into(),
                redirect_uri: redirect_uri.into(),
            },
        );
        let mut location = url::Url::parse(redirect_uri).map_err(|e| reject(400, e.to_string()))?;
        location
            .query_pairs_mut()
            .append_pair("code", &code)
            .append_pair("state", state);
        Ok((code, location.into()))
    }

    pub fn token(&self, req: &TokenRequest) -> Result<Value, Reject> {
        let mut inner = self.inner.lock().unwrap();
        match req.grant_type.as_str() {
            "authorization_code" => {
                let code = req.code.as_deref().unwrap_or_default();
                let pending = inner.codes.remove(code).ok_or_else(|| reject(400, "invalid_grant"))?;
                let verifier = req.code_verifier.as_deref().unwrap_or_default();
                if !pkce::verify(verifier, &pending.challenge) {
                    return Err(reject(400, "invalid_grant"));
                }
                if req.client_id.as_deref().is_some_and(|c| c != pending.client_id)
                    || req.redirect_uri.as_deref().is_some_and(|r| r != pending.redirect_uri)
                {
                    return Err(reject(400, "invalid_grant"));
                }
            }
            "refresh_token" => {
                let rt = req.refresh_token.as_deref().unwrap_or_default();
                if !inner.refresh.remove(rt) {
                    return Err(reject(400, "invalid_grant"));
                }
            }
            _ => return Err(reject(400, "unsupported_grant_type")),
        }
        let access = pkce::random_token(24);
        let refresh = pkce::random_token(24);
        inner.access.insert(access.clone());
        inner.refresh.insert(refresh.clone());
        Ok(json!({
            "access_token": access,
            "refresh_token": refresh,
            "token_type": "Bearer",
            "expires_in": TOKEN_TTL_SECONDS,
        }))
    }

    fn check_bearer(inner: &Inner, token: &str) -> Result<(), Reject> {
        if inner.access.contains(token) {
            Ok(())
        } else {
            Err(reject(401, "invalid access token"))
        }
    }

    fn check_resource(&self, resource_type: &str) -> Result<(), Reject> {
        if resource_type == self.schema.provider_id {
            Ok(())
        } else {
            Err(reject(400, format!("unknown resource type `{resource_type}`")))
        }
    }

    /// Runs a query over the records. Without a query the whole collection
    /// is returned.
    pub fn pull(&self, token: &str, resource_type: &str, query: Option<&str>) -> Result<Value, Reject> {
        let mut inner = self.inner.lock().unwrap();
        Self::check_bearer(&inner, token)?;
        self.check_resource(resource_type)?;
        inner.pulls += 1;
        match query.filter(|q| !q.trim().is_empty()) {
            Some(q) => {
                let fields = parse_query(q).map_err(|e| reject(400, e.to_string()))?;
                execute(&self.schema, &fields, &inner.records).map_err(|e| reject(400, e.to_string()))
            }
            None => Ok(json!({ self.schema.collection: inner.records })),
        }
    }

    /// Create, update or delete one record, journaling every applied action.
    pub fn write(&self, token: &str, resource_type: &str, request: &ActionRequest) -> Result<Value, Reject> {
        let mut inner = self.inner.lock().unwrap();
        Self::check_bearer(&inner, token)?;
        self.check_resource(resource_type)?;
        let target_id = request
            .parameters
            .get("id")
            .or_else(|| request.body.get("id"))
            .and_then(Value::as_str)
            .map(str::to_string);
        let record_id = match request.action.as_str() {
            "create" => {
                let mut record = match &request.body {
                    Value::Object(m) => m.clone(),
                    Value::Null => Map::new(),
                    _ => return Err(reject(400, "body must be an object")),
                };
                for (k, v) in &request.parameters {
                    let v = match (self.schema.field(k), v) {
                        (Some(crate::schema::Kind::List(_)), Value::String(_)) => json!([v]),
                        _ => v.clone(),
                    };
                    record.insert(k.clone(), v);
                }
                inner.next_id += 1;
                let id = target_id.unwrap_or_else(|| format!("new-{}", inner.next_id));
                record.insert("id".into(), json!(id));
                let record = Value::Object(record);
                self.schema.validate_record(&record).map_err(|m| reject(400, m))?;
                inner.records.push(record);
                id
            }
            "update" => {
                let id = target_id.ok_or_else(|| reject(400, "update needs an id"))?;
                let record = inner
                    .records
                    .iter_mut()
                    .find(|r| r.get("id").and_then(Value::as_str) == Some(&id))
                    .ok_or_else(|| reject(404, format!("no record {id}")))?;
                let mut updated = record.clone();
                if let (Value::Object(dst), Value::Object(src)) = (&mut updated, &request.body) {
                    for (k, v) in src {
                        dst.insert(k.clone(), v.clone());
                    }
                }
                self.schema.validate_record(&updated).map_err(|m| reject(400, m))?;
                *record = updated;
                id
            }
            "delete" => {
                let id = target_id.ok_or_else(|| reject(400, "delete needs an id"))?;
                let before = inner.records.len();
                inner.records.retain(|r| r.get("id").and_then(Value::as_str) != Some(&id));
                if inner.records.len() == before {
                    return Err(reject(404, format!("no record {id}")));
                }
                id
            }
            other => return Err(reject(400, format!("unsupported action `{other}`"))),
        };
        let seq = inner.journal.len();
        inner.journal.push(JournalEntry {
            seq,
            action: request.action.clone(),
            resource_type: resource_type.into(),
            request: request.clone(),
            record_id: record_id.clone(),
        });
        Ok(json!({"id": record_id, "seq": seq}))
    }
}

/// A background HTTP server; aborted on drop.
pub struct MockServer {
    pub addr: SocketAddr,
    handle: JoinHandle<()>,
}

impl MockServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

pub async fn serve_router(router: Router) -> std::io::Result<MockServer> {
    let listener = tokio::net::TcpListener::bind((Ipv4Addr::LOCALHOST, 0)).await?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        let _ = axum::serve(listener, router).await;
    });
    Ok(MockServer { addr, handle })
}

fn error_response(r: Reject) -> Response {
    let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::BAD_REQUEST);
    (status, Json(json!({"error": r.message}))).into_response()
}

fn bearer(headers: &HeaderMap) -> &str {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .unwrap_or_default()
}

async fn http_authorize(State(p): State<Arc<MockProvider>>, Query(q): Query<HashMap<String, String>>) -> Response {
    let get = |k: &str| q.get(k).map(String::as_str).unwrap_or_default();
    let method = q.get("code_challenge_method").map(String::as_str).unwrap_or("S256");
    match p.authorize(get("client_id"), get("redirect_uri"), get("state"), get("code_challenge"), method) {
        Ok((_, location)) => (StatusCode::FOUND, [(header::LOCATION, location)]).into_response(),
        Err(r) => error_response(r),
    }
}

async fn http_token(State(p): State<Arc<MockProvider>>, Json(req): Json<TokenRequest>) -> Response {
    match p.token(&req) {
        Ok(v) => Json(v).into_response(),
        Err(r) => error_response(r),
    }
}

#[derive(Deserialize)]
struct PullBody {
    resource_type: String,
    #[serde(default)]
    query: Option<String>,
}

async fn http_pull(State(p): State<Arc<MockProvider>>, headers: HeaderMap, Json(b): Json<PullBody>) -> Response {
    match p.pull(bearer(&headers), &b.resource_type, b.query.as_deref()) {
        Ok(v) => Json(v).into_response(),
        Err(r) => error_response(r),
    }
}

#[derive(Deserialize)]
struct WriteBody {
    resource_type: String,
    request: ActionRequest,
}

async fn http_write(State(p): State<Arc<MockProvider>>, headers: HeaderMap, Json(b): Json<WriteBody>) -> Response {
    match p.write(bearer(&headers), &b.resource_type, &b.request) {
        Ok(v) => Json(v).into_response(),
        Err(r) => error_response(r),
    }
}

pub async fn serve_provider(provider: Arc<MockProvider>) -> std::io::Result<MockServer> {
    let router = Router::new()
        .route("/authorize", get(http_authorize))
        .route("/token", post(http_token))
        .route("/pull", post(http_pull))
        .route("/write", post(http_write))
        .with_state(provider);
    serve_router(router).await
}

/// Direct in-process access to mock providers for the hub, keyed by provider id.
#[derive(Default, Clone)]
pub struct FixtureConnector {
    providers: HashMap<String, Arc<MockProvider>>,
}

const IN_PROCESS_CALLBACK: &str = "http://127.0.0.1/hub-callback";
const IN_PROCESS_CLIENT: &str = "local-hub";

fn to_provider_error(r: Reject) -> ProviderError {
    ProviderError::Rejected {
        status: r.status,
        message: r.message,
    }
}

impl FixtureConnector {
    pub fn new(providers: impl IntoIterator<Item = Arc<MockProvider>>) -> Self {
        Self {
            providers: providers
                .into_iter()
                .map(|p| (p.provider_id().to_string(), p))
                .collect(),
        }
    }

    fn get(&self, id: &str) -> Result<&MockProvider, ProviderError> {
        self.providers
            .get(id)
            .map(Arc::as_ref)
            .ok_or_else(|| ProviderError::NoCredentials(id.into()))
    }

    fn token_set(provider_id: &str, v: Value, now: DateTime<Utc>) -> ProviderTokenSet {
        ProviderTokenSet {
            provider_id: provider_id.into(),
            access_token: v["access_token"].as_str().unwrap_or_default().into(),
            refresh_token: v["refresh_token"].as_str().map(str::to_string),
            id_token: None,
            expires_at: now + TimeDelta::seconds(v["expires_in"].as_i64().unwrap_or(TOKEN_TTL_SECONDS)),
        }
    }
}

impl Connector for FixtureConnector {
    fn authorize(
        &self,
        provider_id: &str,
        challenge: &PkceChallenge,
        state: &str,
    ) -> Result<(String, String), ProviderError> {
        let (code, _) = self
            .get(provider_id)?
            .authorize(IN_PROCESS_CLIENT, IN_PROCESS_CALLBACK, state, &challenge.code_challenge, &challenge.method)
            .map_err(to_provider_error)?;
        Ok((code, state.into()))
    }

    fn exchange(
        &self,
        provider_id: &str,
        code: &str,
        verifier: &str,
        now: DateTime<Utc>,
    ) -> Result<ProviderTokenSet, ProviderError> {
        let req = TokenRequest {
            grant_type: "authorization_code".into(),
            code: Some(code.into()),
            code_verifier: Some(verifier.into()),
            refresh_token: None,
            client_id: Some(IN_PROCESS_CLIENT.into()),
            redirect_uri: Some(IN_PROCESS_CALLBACK.into()),
        };
        let v = self.get(provider_id)?.token(&req).map_err(to_provider_error)?;
        Ok(Self::token_set(provider_id, v, now))
    }

    fn refresh(&self, provider_id: &str, refresh_token: &str, now: DateTime<Utc>) -> Result<ProviderTokenSet, ProviderError> {
        let req = TokenRequest {
            grant_type: "refresh_token".into(),
            code: None,
            code_verifier: None,
            refresh_token: Some(refresh_token.into()),
            client_id: None,
            redirect_uri: None,
        };
        let v = self.get(provider_id)?.token(&req).map_err(to_provider_error)?;
        Ok(Self::token_set(provider_id, v, now))
    }

    fn pull(
        &self,
        provider_id: &str,
        access_token: &str,
        resource_type: &str,
        query: Option<&str>,
    ) -> Result<Value, ProviderError> {
        self.get(provider_id)?
            .pull(access_token, resource_type, query)
            .map_err(to_provider_error)
    }

    fn write(
        &self,
        provider_id: &str,
        access_token: &str,
        resource_type: &str,
        request: &ActionRequest,
    ) -> Result<Value, ProviderError> {
        self.get(provider_id)?
            .write(access_token, resource_type, request)
            .map_err(to_provider_error)
    }
}
