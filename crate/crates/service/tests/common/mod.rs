#![allow(dead_code)]

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hub_core::broker::pkce;
use hub_service::{start, Parts, RunningHub, ServiceConfig};
use serde_json::{json, Value};

async fn serve(router: Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind((Ipv4Addr::LOCALHOST, 0)).await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router).await.unwrap();
    });
    addr
}

#[derive(Default)]
pub struct ProviderState {
    codes: Mutex<HashMap<String, String>>,
    pub journal: Mutex<Vec<Value>>,
    pub events: Mutex<Vec<Value>>,
}

async fn p_authorize(State(s): State<Arc<ProviderState>>, Query(q): Query<HashMap<String, String>>) -> Response {
    let code = pkce::random_token(12);
    s.codes.lock().unwrap().insert(code.clone(), q["code_challenge"].clone());
    let loc = format!("{}?code={code}&state={}", q["redirect_uri"], q["state"]);
    (StatusCode::FOUND, [(header::LOCATION, loc)]).into_response()
}

async fn p_token(State(s): State<Arc<ProviderState>>, Json(b): Json<Value>) -> Response {
    if b["grant_type"] == "authorization_code" {
        let challenge = s.codes.lock().unwrap().remove(b["code"].as_str().unwrap_or_default());
        match challenge {
            Some(c) if pkce::verify(b["code_verifier"].as_str().unwrap_or_default(), &c) => {}
            _ => return (StatusCode::BAD_REQUEST, Json(json!({"error": "invalid_grant"}))).into_response(),
        }
    }
    Json(json!({"access_token": "provider-access", "refresh_token": "provider-refresh", "expires_in": 3600}))
        .into_response()
}

fn bearer_ok(h: &HeaderMap) -> bool {
    h.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()) == Some("Bearer provider-access")
}

async fn p_pull(State(s): State<Arc<ProviderState>>, h: HeaderMap) -> Response {
    if !bearer_ok(&h) {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    Json(json!({"events": *s.events.lock().unwrap()})).into_response()
}

async fn p_write(State(s): State<Arc<ProviderState>>, h: HeaderMap, Json(b): Json<Value>) -> Response {
    if !bearer_ok(&h) {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    s.journal.lock().unwrap().push(b["request"].clone());
    Json(json!({"ok": true})).into_response()
}

pub fn zoom_events() -> Vec<Value> {
    vec![
        json!({"summary": "standup", "location": "https://zoom.us/j/1", "start": {"dateTime": "2099-01-01T10:00:00Z"}}),
        json!({"summary": "lunch", "location": "cafe", "start": {"dateTime": "2099-01-01T12:00:00Z"}}),
        json!({"summary": "old", "description": "zoom.us/j/2", "start": {"dateTime": "2001-01-01T10:00:00Z"}}),
    ]
}

pub async fn provider() -> (String, Arc<ProviderState>) {
    let state = Arc::new(ProviderState::default());
    *state.events.lock().unwrap() = zoom_events();
    let router = Router::new()
        .route("/authorize", get(p_authorize))
        .route("/token", post(p_token))
        .route("/pull", post(p_pull))
        .route("/write", post(p_write))
        .with_state(state.clone());
    (format!("http://{}", serve(router).await), state)
}

#[derive(Default)]
pub struct AppState {
    pub received: Mutex<Vec<(String, Bytes)>>,
    pub fail: AtomicUsize,
}

async fn app_receive(State(s): State<Arc<AppState>>, h: HeaderMap, body: Bytes) -> StatusCode {
    if s.fail.load(Ordering::SeqCst) > 0 {
        s.fail.fetch_sub(1, Ordering::SeqCst);
        return StatusCode::INTERNAL_SERVER_ERROR;
    }
    let sig = h
        .get("x-oauthhub-signature")
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_string();
    s.received.lock().unwrap().push((sig, body));
    StatusCode::OK
}

pub async fn app() -> (String, Arc<AppState>) {
    let state = Arc::new(AppState::default());
    let router = Router::new().route("/deliver", post(app_receive)).with_state(state.clone());
    (format!("http://{}/deliver", serve(router).await), state)
}

pub struct Env {
    pub hub: RunningHub,
    pub base: String,
    pub provider: Arc<ProviderState>,
    pub app: Arc<AppState>,
    pub endpoint: String,
    pub http: reqwest::Client,
}

pub async fn env_with(auto_approve: bool, parts: impl FnOnce(&ServiceConfig) -> Parts) -> Env {
    let (provider_url, provider) = provider().await;
    let (endpoint, app) = app().await;
    let mut config = ServiceConfig {
        port: 0,
        auto_approve,
        ..ServiceConfig::default()
    };
    for id in ["google_calendar", "google_drive", "gmail"] {
        config.providers.insert(id.into(), provider_url.clone());
    }
    let parts = parts(&config);
    let hub = start(config, parts).await.unwrap();
    Env {
        base: hub.base_url(),
        hub,
        provider,
        app,
        endpoint,
        http: reqwest::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .build()
            .unwrap(),
    }
}

pub async fn env(auto_approve: bool) -> Env {
    env_with(auto_approve, |c| {
        let mut p = Parts::for_config(c);
        p.hub_config.retry = hub_core::scheduler::RetryPolicy::immediate(3);
        p
    })
    .await
}

pub struct Authorized {
    pub code: String,
    pub verifier: String,
}

impl Env {
    pub fn authorize_url(&self, manifest: &str, access_type: &str, schedule: Option<&str>, verifier: &str) -> String {
        let mut url = url::Url::parse(&format!("{}/authorize", self.base)).unwrap();
        url.query_pairs_mut()
            .append_pair("client_id", "app-1")
            .append_pair("manifest", &URL_SAFE_NO_PAD.encode(manifest))
            .append_pair("redirect_uri", "http://app.local/cb")
            .append_pair("state", "st-1")
            .append_pair("code_challenge", &pkce::challenge_for(verifier))
            .append_pair("access_type", access_type);
        if let Some(s) = schedule {
            url.query_pairs_mut().append_pair("schedule", s);
        }
        url.to_string()
    }

    /// Runs /authorize with auto-approve and returns the code from the redirect.
    pub async fn authorize(&self, manifest: &str, access_type: &str, schedule: Option<&str>) -> Authorized {
        let verifier = pkce::generate_verifier();
        let resp = self
            .http
            .get(self.authorize_url(manifest, access_type, schedule, &verifier))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 302, "{}", resp.text().await.unwrap());
        let loc = url::Url::parse(resp.headers()["location"].to_str().unwrap()).unwrap();
        let q: HashMap<_, _> = loc.query_pairs().into_owned().collect();
        assert_eq!(q["state"], "st-1");
        Authorized {
            code: q["code"].clone(),
            verifier,
        }
    }

    pub async fn token(&self, code: &str, verifier: &str, client_id: &str) -> reqwest::Response {
        self.http
            .post(format!("{}/token", self.base))
            .json(&json!({
                "grant_type": "authorization_code",
                "code": code,
                "code_verifier": verifier,
                "client_id": client_id,
                "endpoint": self.endpoint,
            }))
            .send()
            .await
            .unwrap()
    }

    /// Authorize plus token exchange; returns the token response body.
    pub async fn connect(&self, manifest: &str, access_type: &str, schedule: Option<&str>) -> Value {
        let a = self.authorize(manifest, access_type, schedule).await;
        let resp = self.token(&a.code, &a.verifier, "app-1").await;
        assert_eq!(resp.status(), 200);
        resp.json().await.unwrap()
    }

    pub async fn query(&self, token: &str, manifest_id: &str, request: Option<Value>) -> (u16, Value) {
        let mut body = json!({"token": token, "manifest_id": manifest_id});
        if let Some(r) = request {
            body["request"] = r;
        }
        let resp = self.http.post(format!("{}/query", self.base)).json(&body).send().await.unwrap();
        (resp.status().as_u16(), resp.json().await.unwrap_or(Value::Null))
    }

    pub fn manage(&self, method: reqwest::Method, path: &str) -> reqwest::RequestBuilder {
        self.http
            .request(method, format!("{}/manage{path}", self.base))
            .header(hub_service::SESSION_HEADER, &self.hub.secret)
    }
}
