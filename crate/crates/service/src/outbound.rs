//! Blocking HTTP clients for provider calls and envelope delivery.

use std::collections::HashMap;
use std::time::Duration;

use chrono::{DateTime, TimeDelta, Utc};
use hub_core::broker::{PkceChallenge, ProviderTokenSet};
use hub_core::engine::{ActionRequest, ProviderError};
use hub_core::hub::{Connector, Transport, TransportError, SIGNATURE_HEADER};
use serde::Deserialize;
use serde_json::{json, Value};

pub const PROVIDER_CALLBACK: &str = "http://127.0.0.1/hub-callback";

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .max_redirects(0)
        .timeout_global(Some(Duration::from_secs(15)))
        .build()
        .into()
}

/// Talks to providers that expose `/authorize`, `/token`, `/pull` and `/write`.
pub struct HttpConnector {
    agent: ureq::Agent,
    providers: HashMap<String, String>,
    client_id: String,
}

#[derive(Deserialize)]
struct TokenBody {
    access_token: String,
    #[serde(default)]
    refresh_token: Option<String>,
    #[serde(default)]
    id_token: Option<String>,
    #[serde(default)]
    expires_in: Option<i64>,
}

fn unavailable(e: impl std::fmt::Display) -> ProviderError {
    ProviderError::Unavailable(e.to_string())
}

impl HttpConnector {
    pub fn new(providers: HashMap<String, String>) -> Self {
        Self {
            agent: agent(),
            providers,
            client_id: "local-hub".into(),
        }
    }

    fn base(&self, provider_id: &str) -> Result<&str, ProviderError> {
        self.providers
            .get(provider_id)
            .map(|s| s.trim_end_matches('/'))
            .ok_or_else(|| ProviderError::NoCredentials(provider_id.into()))
    }

    fn post(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, ProviderError> {
        let mut req = self.agent.post(url);
        if let Some(t) = bearer {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(unavailable)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(unavailable)?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Rejected { status, message: text });
        }
        serde_json::from_str(&text).map_err(unavailable)
    }

    fn token(&self, provider_id: &str, body: Value, now: DateTime<Utc>) -> Result<ProviderTokenSet, ProviderError> {
        let url = format!("{}/token", self.base(provider_id)?);
        let raw = self.post(&url, None, &body)?;
        let t: TokenBody = serde_json::from_value(raw).map_err(unavailable)?;
        Ok(ProviderTokenSet {
            provider_id: provider_id.into(),
            access_token: t.access_token,
            refresh_token: t.refresh_token,
            id_token: t.id_token,
            expires_at: now + TimeDelta::seconds(t.expires_in.unwrap_or(3600)),
        })
    }
}

impl Connector for HttpConnector {
    fn authorize(
        &self,
        provider_id: &str,
        challenge: &PkceChallenge,
        state: &str,
    ) -> Result<(String, String), ProviderError> {
        let url = format!("{}/authorize", self.base(provider_id)?);
        let resp = self
            .agent
            .get(&url)
            .query("response_type", "code")
            .query("client_id", &self.client_id)
            .query("redirect_uri", PROVIDER_CALLBACK)
            .query("state", state)
            .query("code_challenge", &challenge.code_challenge)
            .query("code_challenge_method", &challenge.method)
            .call()
            .map_err(unavailable)?;
        let status = resp.status().as_u16();
        let location = resp
            .headers()
            .get("location")
            .and_then(|v| v.to_str().ok())
            .ok_or_else(|| ProviderError::Rejected {
                status,
                message: "authorization did not redirect".into(),
            })?;
        let parsed = url::Url::parse(location).map_err(unavailable)?;
        let param = |k: &str| parsed.query_pairs().find(|(n, _)| n == k).map(|(_, v)| v.into_owned());
        if let Some(err) = param("error") {
            return Err(ProviderError::Rejected { status, message: err });
        }
        match (param("code"), param("state")) {
            (Some(code), Some(state)) => Ok((code, state)),
            _ => Err(ProviderError::Rejected {
                status,
                message: "redirect lacks code or state".into(),
            }),
        }
    }

    fn exchange(
        &self,
        provider_id: &str,
        code: &str,
        verifier: &str,
        now: DateTime<Utc>,
    ) -> Result<ProviderTokenSet, ProviderError> {
        let body = json!({
            "grant_type": "authorization_code",
            "code": code,
            "code_verifier": verifier,
            "client_id": self.client_id,
            "redirect_uri": PROVIDER_CALLBACK,
        });
        self.token(provider_id, body, now)
    }

    fn refresh(&self, provider_id: &str, refresh_token: &str, now: DateTime<Utc>) -> Result<ProviderTokenSet, ProviderError> {
        let body = json!({
            "grant_type": "refresh_token",
            "refresh_token": refresh_token,
            "client_id": self.client_id,
        });
        self.token(provider_id, body, now)
    }

    fn pull(
        &self,
        provider_id: &str,
        access_token: &str,
        resource_type: &str,
        query: Option<&str>,
    ) -> Result<Value, ProviderError> {
        let url = format!("{}/pull", self.base(provider_id)?);
        self.post(&url, Some(access_token), &json!({"resource_type": resource_type, "query": query}))
    }

    fn write(
        &self,
        provider_id: &str,
        access_token: &str,
        resource_type: &str,
        request: &ActionRequest,
    ) -> Result<Value, ProviderError> {
        let url = format!("{}/write", self.base(provider_id)?);
        self.post(&url, Some(access_token), &json!({"resource_type": resource_type, "request": request}))
    }
}

/// POSTs envelope bytes with the detached signature header.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new() -> Self {
        Self { agent: agent() }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for HttpTransport {
    fn send(&self, endpoint: &str, body: &[u8], signature: &str) -> Result<(), TransportError> {
        let resp = self
            .agent
            .post(endpoint)
            .header(SIGNATURE_HEADER, signature)
            .content_type("application/json")
            .send(body)
            .map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            Ok(())
        } else {
            Err(TransportError(format!("endpoint answered {status}")))
        }
    }
}
