//! App-side client for the hub: authorization URLs, code exchange, queries
//! and verification of signed deliveries.
//!
//! Token storage is the app's job. After every [`HubClient::query`] the app
//! must persist `next_token` before acting on the status, including when the
//! call fails with a [`SdkError::Hub`] that carries a token.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hub_core::broker::{pkce, verify_detached, Jwk};
use hub_core::engine::ActionRequest;
use hub_core::hub::{DeliveryEnvelope, SIGNATURE_HEADER};
use hub_core::manifest::{parse, validate, AccessPattern};
use hub_core::scheduler::Schedule;
use reqwest::header::HeaderMap;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use url::Url;

pub use hub_core::hub::QueryStatus;

pub const DEFAULT_HUB_URL: &str = "http://127.0.0.1:7391";

#[derive(Debug, Error)]
pub enum SdkError {
    #[error("manifest rejected locally: {}", .0.join("; "))]
    InvalidManifest(Vec<String>),
    #[error("bad client configuration: {0}")]
    InvalidConfig(String),
    #[error("hub answered {status}: {body}")]
    Hub { status: u16, body: Value },
    #[error("hub unreachable: {0}")]
    Unreachable(String),
    #[error("delivery carries no signature header")]
    MissingSignature,
    #[error("delivery signature does not verify")]
    BadSignature,
    #[error("delivery body is not an envelope: {0}")]
    MalformedEnvelope(String),
    #[error("callback state does not match")]
    StateMismatch,
    #[error("authorization denied: {0}")]
    Denied(String),
    #[error("callback carries no code")]
    MissingCode,
}

impl SdkError {
    /// The rotated token a failed query still hands back, if any.
    pub fn next_token(&self) -> Option<&str> {
        match self {
            SdkError::Hub { body, .. } => body.get("token").and_then(Value::as_str),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientConfig {
    pub client_id: String,
    pub hub_base_url: Url,
    pub app_endpoint: Url,
    pub redirect_uri: Url,
}

fn absolute(name: &str, s: &str) -> Result<Url, SdkError> {
    let url = Url::parse(s).map_err(|e| SdkError::InvalidConfig(format!("{name}: {e}")))?;
    if url.cannot_be_a_base() || url.host().is_none() {
        return Err(SdkError::InvalidConfig(format!("{name} must be an absolute http(s) URL")));
    }
    Ok(url)
}

impl ClientConfig {
    /// Config against the default loopback hub.
    pub fn new(client_id: &str, app_endpoint: &str, redirect_uri: &str) -> Result<Self, SdkError> {
        Self::with_hub(client_id, DEFAULT_HUB_URL, app_endpoint, redirect_uri)
    }

    pub fn with_hub(
        client_id: &str,
        hub_base_url: &str,
        app_endpoint: &str,
        redirect_uri: &str,
    ) -> Result<Self, SdkError> {
        if client_id.is_empty() {
            return Err(SdkError::InvalidConfig("client_id is empty".into()));
        }
        Ok(Self {
            client_id: client_id.into(),
            hub_base_url: absolute("hub_base_url", hub_base_url)?,
            app_endpoint: absolute("app_endpoint", app_endpoint)?,
            redirect_uri: absolute("redirect_uri", redirect_uri)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthUrl {
    pub url: String,
    pub state: String,
    pub code_verifier: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
pub struct TokenGrant {
    #[serde(rename = "access_token")]
    pub token: String,
    pub token_type: String,
    pub expires_in: i64,
    #[serde(default)]
    pub id_token: Option<String>,
    pub hub_public_key: Jwk,
    pub grant_id: String,
    pub manifest_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryResult {
    pub status: QueryStatus,
    pub next_token: String,
    pub delivery_id: Option<String>,
    pub reason: Option<String>,
}

/// The id a hub assigns a manifest; queries are keyed by it.
pub fn manifest_id(manifest_text: &str) -> Result<String, SdkError> {
    parse(manifest_text)
        .map(|m| m.manifest_hash)
        .map_err(|e| SdkError::InvalidManifest(vec![e.to_string()]))
}

fn prevalidate(manifest_text: &str) -> Result<(), SdkError> {
    let m = parse(manifest_text).map_err(|e| SdkError::InvalidManifest(vec![e.to_string()]))?;
    let diagnostics = validate(&m);
    if diagnostics.is_empty() {
        Ok(())
    } else {
        Err(SdkError::InvalidManifest(diagnostics.iter().map(|d| d.to_string()).collect()))
    }
}

/// Checks a delivery against the hub key and returns the parsed envelope.
/// The body is parsed only after the signature verifies.
pub fn verify_delivery(headers: &HeaderMap, body: &[u8], hub_public_key: &Jwk) -> Result<DeliveryEnvelope, SdkError> {
    let sig = headers
        .get(SIGNATURE_HEADER)
        .ok_or(SdkError::MissingSignature)?
        .to_str()
        .map_err(|_| SdkError::BadSignature)?;
    if !verify_detached(sig, hub_public_key, body) {
        return Err(SdkError::BadSignature);
    }
    serde_json::from_slice(body).map_err(|e| SdkError::MalformedEnvelope(e.to_string()))
}

pub struct HubClient {
    config: ClientConfig,
    http: reqwest::Client,
}

impl HubClient {
    pub fn new(config: ClientConfig) -> Self {
        Self {
            config,
            http: reqwest::Client::new(),
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Builds the hub authorization URL with a fresh state and S256 challenge.
    /// Keep `state` and `code_verifier` until the callback arrives.
    pub fn generate_auth_url(
        &self,
        provider: &str,
        manifest_text: &str,
        access_type: AccessPattern,
        schedule: Option<&Schedule>,
    ) -> Result<AuthUrl, SdkError> {
        prevalidate(manifest_text)?;
        let state = pkce::random_token(16);
        let code_verifier = pkce::generate_verifier();
        let mut url = self
            .config
            .hub_base_url
            .join("authorize")
            .map_err(|e| SdkError::InvalidConfig(e.to_string()))?;
        {
            let mut q = url.query_pairs_mut();
            q.append_pair("client_id", &self.config.client_id)
                .append_pair("provider", provider)
                .append_pair("manifest", &URL_SAFE_NO_PAD.encode(manifest_text))
                .append_pair("redirect_uri", self.config.redirect_uri.as_str())
                .append_pair("state", &state)
                .append_pair("code_challenge", &pkce::challenge_for(&code_verifier))
                .append_pair("code_challenge_method", "S256")
                .append_pair("access_type", access_type.as_str());
            if let Some(s) = schedule {
                q.append_pair("schedule", &s.to_param());
            }
        }
        Ok(AuthUrl {
            url: url.into(),
            state,
            code_verifier,
        })
    }

    /// Pulls the code out of the redirect back to the app. The state must
    /// match exactly.
    pub fn parse_callback(&self, callback_url: &str, expected_state: &str) -> Result<String, SdkError> {
        let url = Url::parse(callback_url).map_err(|e| SdkError::InvalidConfig(e.to_string()))?;
        let get = |k: &str| url.query_pairs().find(|(n, _)| n == k).map(|(_, v)| v.into_owned());
        if get("state").as_deref() != Some(expected_state) {
            return Err(SdkError::StateMismatch);
        }
        if let Some(err) = get("error") {
            return Err(SdkError::Denied(err));
        }
        get("code").ok_or(SdkError::MissingCode)
    }

    async fn post(&self, path: &str, body: Value) -> Result<(StatusCode, Value), SdkError> {
        let url = self
            .config
            .hub_base_url
            .join(path)
            .map_err(|e| SdkError::InvalidConfig(e.to_string()))?;
        let resp = self
            .http
            .post(url)
            .json(&body)
            .send()
            .await
            .map_err(|e| SdkError::Unreachable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| SdkError::Unreachable(e.to_string()))?;
        let body = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Ok((status, body))
    }

    pub async fn exchange_token(&self, code: &str, code_verifier: &str) -> Result<TokenGrant, SdkError> {
        let (status, body) = self
            .post(
                "token",
                json!({
                    "grant_type": "authorization_code",
                    "code": code,
                    "code_verifier": code_verifier,
                    "client_id": self.config.client_id,
                    "endpoint": self.config.app_endpoint.as_str(),
                }),
            )
            .await?;
        if !status.is_success() {
            return Err(SdkError::Hub { status: status.as_u16(), body });
        }
        serde_json::from_value(body.clone()).map_err(|_| SdkError::Hub { status: status.as_u16(), body })
    }

    /// A constraint denial comes back as `Ok` with status `Denied`; other
    /// failures are errors, most still carrying the next token.
    pub async fn query(
        &self,
        token: &str,
        manifest_id: &str,
        request: Option<&ActionRequest>,
    ) -> Result<QueryResult, SdkError> {
        let mut payload = json!({"token": token, "manifest_id": manifest_id});
        if let Some(r) = request {
            payload["request"] = serde_json::to_value(r).map_err(|e| SdkError::InvalidConfig(e.to_string()))?;
        }
        let (status, body) = self.post("query", payload).await?;
        let denied = status == StatusCode::FORBIDDEN && body["status"] == "denied";
        if !status.is_success() && !denied {
            return Err(SdkError::Hub { status: status.as_u16(), body });
        }
        let text = |k: &str| body.get(k).and_then(Value::as_str).map(str::to_string);
        let next_token = text("token").ok_or_else(|| SdkError::Hub {
            status: status.as_u16(),
            body: body.clone(),
        })?;
        Ok(QueryResult {
            status: if denied { QueryStatus::Denied } else { QueryStatus::Delivered },
            next_token,
            delivery_id: text("delivery_id"),
            reason: text("reason"),
        })
    }
}
