//! Hub, providers and app wired together in process under a virtual clock.

use std::sync::Arc;

use chrono::{DateTime, TimeDelta, Utc};
use hub_core::broker::{pkce, Jwk, MemoryKeyStore, Vault};
use hub_core::engine::ActionRequest;
use hub_core::hub::{AuthorizeInput, AuthorizeOutcome, Hub, HubConfig, HubError, QueryFailure, QueryResponse, RunOutcome};
use hub_core::manifest::{parse, AccessPattern};
use hub_core::policy::{AccessLog, Constraint, Decision};
use hub_core::scheduler::{Activation, RetryPolicy, Schedule};

use crate::app::MockApp;
use crate::fixture::Fixture;
use crate::provider::{FixtureConnector, MockProvider};
use crate::schema::SchemaError;

pub const APP_ENDPOINT: &str = "http://app.invalid/deliver";
const APP_REDIRECT: &str = "http://app.invalid/callback";

#[derive(Debug, Clone)]
pub struct Session {
    pub client_id: String,
    pub grant_id: String,
    pub manifest_id: String,
    pub token: String,
    pub hub_key: Jwk,
}

pub struct World {
    pub hub: Hub,
    pub app: Arc<MockApp>,
    pub providers: Vec<Arc<MockProvider>>,
    pub now: DateTime<Utc>,
}

impl World {
    pub fn new(fixtures: &[Fixture], start: DateTime<Utc>) -> Result<Self, SchemaError> {
        let providers = fixtures
            .iter()
            .map(|f| MockProvider::new(f).map(Arc::new))
            .collect::<Result<Vec<_>, _>>()?;
        let app = Arc::new(MockApp::new());
        let config = HubConfig {
            retry: RetryPolicy::immediate(3),
            noise_seed: Some(0),
            ..HubConfig::default()
        };
        let vault = Vault::in_memory(&MemoryKeyStore::random()).expect("in-memory vault");
        let hub = Hub::new(
            config,
            vault,
            AccessLog::in_memory(),
            Arc::new(FixtureConnector::new(providers.iter().cloned())),
            app.clone(),
        );
        Ok(Self {
            hub,
            app,
            providers,
            now: start,
        })
    }

    pub fn provider(&self, id: &str) -> Option<&MockProvider> {
        self.providers.iter().find(|p| p.provider_id() == id).map(Arc::as_ref)
    }

    pub fn advance(&mut self, by: TimeDelta) -> DateTime<Utc> {
        self.now += by;
        self.now
    }

    /// Authorizes and allows with `constraints`; returns `(code, verifier)`.
    pub fn approve(
        &mut self,
        client_id: &str,
        manifest_text: &str,
        access_type: AccessPattern,
        schedule: Option<Schedule>,
        constraints: Vec<Constraint>,
    ) -> Result<(String, String), HubError> {
        let manifest = parse(manifest_text)?;
        let provider_id = hub_service::api::manifest_provider(&manifest)
            .ok_or_else(|| HubError::BadRequest("manifest names no resource type".into()))?;
        let verifier = pkce::generate_verifier();
        let outcome = self.hub.authorize(
            AuthorizeInput {
                client_id: client_id.into(),
                provider_id,
                manifest_text: manifest_text.into(),
                redirect_uri: APP_REDIRECT.into(),
                state: "st".into(),
                code_challenge: pkce::challenge_for(&verifier),
                access_type,
                schedule,
                endpoint: Some(APP_ENDPOINT.into()),
            },
            self.now,
        )?;
        let grant_id = match outcome {
            AuthorizeOutcome::Pending { grant_id, .. } | AuthorizeOutcome::Redirect { grant_id, .. } => grant_id,
        };
        let location = self.hub.decide(&grant_id, Decision::Allow, constraints, self.now)?;
        let code = url::Url::parse(&location)
            .ok()
            .and_then(|u| u.query_pairs().find(|(k, _)| k == "code").map(|(_, v)| v.into_owned()))
            .ok_or_else(|| HubError::BadRequest("no code in redirect".into()))?;
        Ok((code, verifier))
    }

    /// Approves and exchanges the code. Install-time grants run once right
    /// after the exchange.
    pub fn connect(
        &mut self,
        client_id: &str,
        manifest_text: &str,
        access_type: AccessPattern,
        schedule: Option<Schedule>,
        constraints: Vec<Constraint>,
    ) -> Result<Session, HubError> {
        let (code, verifier) = self.approve(client_id, manifest_text, access_type, schedule, constraints)?;
        let (resp, activation) = self.hub.exchange_token(&code, &verifier, client_id, None, self.now)?;
        self.app.trust(resp.hub_public_key.clone());
        if activation == Activation::RunOnce {
            self.hub.run_install(&resp.grant_id, self.now);
        }
        Ok(Session {
            client_id: client_id.into(),
            grant_id: resp.grant_id,
            manifest_id: resp.manifest_id,
            token: resp.access_token,
            hub_key: resp.hub_public_key,
        })
    }

    /// Queries with the session's token and keeps the rotated token.
    pub fn query(&mut self, session: &mut Session, request: Option<ActionRequest>) -> Result<QueryResponse, QueryFailure> {
        let result = self.hub.query(&session.token, &session.manifest_id, request, self.now);
        match &result {
            Ok(r) => session.token = r.token.clone(),
            Err(f) => {
                if let Some(t) = &f.token {
                    session.token = t.clone();
                }
            }
        }
        result
    }

    /// Fires due schedules at the current time; returns how many delivered.
    pub fn tick(&mut self) -> usize {
        delivered(self.hub.tick(self.now))
    }

    /// Jumps the clock across an offline window and catches up once.
    pub fn offline(&mut self, span: TimeDelta) -> usize {
        let from = self.now;
        let to = self.advance(span);
        delivered(self.hub.catch_up(from, to))
    }
}

fn delivered(outcomes: Vec<(String, RunOutcome)>) -> usize {
    outcomes
        .iter()
        .filter(|(_, o)| matches!(o, RunOutcome::Delivered { .. }))
        .count()
}
