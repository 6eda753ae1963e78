//! The hub coordinator: authorization, token exchange, queries, scheduled
//! and install-time deliveries, revocation and previews.
//!
//! All operations take `now`; network effects go through [`Connector`] and
//! [`Transport`] so the same logic runs over HTTP or fully in process.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::broker::{
    pkce, Broker, BrokerError, CodeExchange, Jwk, PkceChallenge, ProviderTokenSet, TokenError, Vault,
};
use crate::engine::{
    execute, ActionRequest, DeliveryClient, DeliveryError, ExecError, ExecutionContext,
    PipelineResult, ProviderClient, ProviderError,
};
use crate::manifest::{
    describe, parse, validate, AccessPattern, Diagnostic, Manifest, OperatorType, ParseError,
    StepDescription,
};
use crate::policy::{
    apply_resource_constraints, AccessLog, AccessLogEntry, ActionType, Constraint, Decision,
    DenyReason, Grant, GrantStatus, Initiator, LogFilter, Outcome, PolicyEngine, PolicyError,
};
use crate::scheduler::{
    AccessBinding, Activation, QueryRejection, RetryPolicy, Schedule, Scheduler,
    DEFAULT_MIN_INTERVAL_SECONDS,
};

/// Provider-side OAuth and data endpoints.
pub trait Connector: Send + Sync {
    /// Runs the provider's authorization step; returns `(code, state)`.
    fn authorize(
        &self,
        provider_id: &str,
        challenge: &PkceChallenge,
        state: &str,
    ) -> Result<(String, String), ProviderError>;
    fn exchange(
        &self,
        provider_id: &str,
        code: &str,
        verifier: &str,
        now: DateTime<Utc>,
    ) -> Result<ProviderTokenSet, ProviderError>;
    fn refresh(
        &self,
        provider_id: &str,
        refresh_token: &str,
        now: DateTime<Utc>,
    ) -> Result<ProviderTokenSet, ProviderError>;
    fn pull(
        &self,
        provider_id: &str,
        access_token: &str,
        resource_type: &str,
        query: Option<&str>,
    ) -> Result<Value, ProviderError>;
    fn write(
        &self,
        provider_id: &str,
        access_token: &str,
        resource_type: &str,
        request: &ActionRequest,
    ) -> Result<Value, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Outbound POST of signed envelopes to app endpoints.
pub trait Transport: Send + Sync {
    fn send(&self, endpoint: &str, body: &[u8], signature: &str) -> Result<(), TransportError>;
}

pub const SIGNATURE_HEADER: &str = "X-OAuthHub-Signature";

/// The signed payload pushed to an app endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryEnvelope {
    pub manifest_id: String,
    pub grant_id: String,
    pub access_type: String,
    pub issued_at: String,
    pub delivery_id: String,
    pub data: Value,
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

#[derive(Clone)]
pub struct HubConfig {
    pub auto_approve: bool,
    pub retry: RetryPolicy,
    pub sleeper: Sleeper,
    pub min_interval_seconds: u64,
    pub token_ttl: TimeDelta,
    /// Fixed seed for the noise operator; fresh randomness per run when unset.
    pub noise_seed: Option<u64>,
    pub console_base: String,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self {
            auto_approve: false,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(std::thread::sleep),
            min_interval_seconds: DEFAULT_MIN_INTERVAL_SECONDS,
            token_ttl: crate::broker::DEFAULT_TOKEN_TTL,
            noise_seed: None,
            console_base: "/console".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum HubError {
    #[error("manifest does not parse: {0}")]
    Parse(#[from] ParseError),
    #[error("manifest is invalid")]
    Invalid(Vec<Diagnostic>),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unknown grant {0}")]
    UnknownGrant(String),
    #[error("unknown manifest {0}")]
    UnknownManifest(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("storage: {0}")]
    Storage(String),
}

impl From<std::io::Error> for HubError {
    fn from(e: std::io::Error) -> Self {
        HubError::Storage(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorizeInput {
    pub client_id: String,
    pub provider_id: String,
    pub manifest_text: String,
    pub redirect_uri: String,
    pub state: String,
    pub code_challenge: String,
    pub access_type: AccessPattern,
    pub schedule: Option<Schedule>,
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuthorizeOutcome {
    /// Waiting for a decision in the console.
    Pending { grant_id: String, console_url: String },
    /// Decided; send the user agent here.
    Redirect { grant_id: String, location: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenResponse {
    pub access_token: String,
    pub token_type: String,
    pub expires_in: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_token: Option<String>,
    pub hub_public_key: Jwk,
    pub grant_id: String,
    pub manifest_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Delivered,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub status: QueryStatus,
    pub token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivery_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub records_out: usize,
}

/// A failed query. `token` carries the rotated token whenever rotation
/// happened, so the client chain survives the failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("{error}: {message}")]
pub struct QueryFailure {
    #[serde(skip)]
    pub http_status: u16,
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

impl QueryFailure {
    fn new(http_status: u16, error: &str, message: impl Into<String>) -> Self {
        Self {
            http_status,
            error: error.into(),
            message: message.into(),
            reason: None,
            token: None,
        }
    }

    fn with_token(mut self, token: &str) -> Self {
        self.token = Some(token.into());
        self
    }
}

/// The result of one pipeline run on behalf of a grant.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Delivered {
        delivery_id: Option<String>,
        result: Box<PipelineResult>,
    },
    Denied(DenyReason),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub grant: Grant,
    pub steps: Vec<StepDescription>,
    pub sample_input: Vec<Value>,
    pub sample_output: Vec<Value>,
    pub input_count: usize,
    pub output_count: usize,
    pub input_bytes: usize,
    pub output_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrantDetail {
    pub grant: Grant,
    pub manifest_title: String,
    pub manifest_description: String,
    pub manifest_text: String,
    pub steps: Vec<StepDescription>,
    pub token_generation: Option<u64>,
}

const SAMPLE_INPUT: usize = 10;
const SAMPLE_OUTPUT: usize = 50;

struct AppLeg {
    redirect_uri: String,
    state: String,
}

struct State {
    broker: Broker,
    policy: PolicyEngine,
    scheduler: Scheduler,
    /// manifest hash -> (manifest with no binding, source text)
    manifests: HashMap<String, (Manifest, String)>,
    /// grant id -> manifest with its access binding
    bound: HashMap<String, Manifest>,
    app_legs: HashMap<String, AppLeg>,
}

pub struct Hub {
    config: HubConfig,
    state: Mutex<State>,
    connector: Arc<dyn Connector>,
    transport: Arc<dyn Transport>,
}

fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn with_query(base: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = base.to_string();
    let mut sep = if base.contains('?') { '&' } else { '?' };
    for (k, v) in pairs {
        out.push(sep);
        out.push_str(k);
        out.push('=');
        out.push_str(&percent_encode(v));
        sep = '&';
    }
    out
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

/// Binds the access pattern and schedule to a parsed manifest. An Inject
/// operator supplies the schedule when scheduled access names none.
pub fn bind_access(
    mut m: Manifest,
    access_type: AccessPattern,
    schedule: Option<Schedule>,
) -> Manifest {
    let injected = m
        .stages()
        .find(|op| op.op_type == OperatorType::Inject)
        .and_then(|op| op.num_param("interval"))
        .filter(|n| *n > 0.0);
    m.access_pattern = Some(access_type);
    m.schedule = match (access_type, schedule, injected) {
        (AccessPattern::Scheduled, None, Some(secs)) => Some(Schedule::every(secs as u64)),
        (_, s, _) => s,
    };
    m
}

impl Hub {
    pub fn new(
        config: HubConfig,
        vault: Vault,
        log: AccessLog,
        connector: Arc<dyn Connector>,
        transport: Arc<dyn Transport>,
    ) -> Self {
        let broker = Broker::new(vault)
            .with_token_ttl(config.token_ttl)
            .with_min_interval(config.min_interval_seconds);
        let scheduler = Scheduler::new(config.min_interval_seconds);
        Self {
            state: Mutex::new(State {
                broker,
                policy: PolicyEngine::new(log),
                scheduler,
                manifests: HashMap::new(),
                bound: HashMap::new(),
                app_legs: HashMap::new(),
            }),
            config,
            connector,
            transport,
        }
    }

    pub fn config(&self) -> &HubConfig {
        &self.config
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("hub state poisoned")
    }

    /// Parses, validates and registers manifest text; returns its hash.
    pub fn register_manifest(&self, text: &str) -> Result<Manifest, HubError> {
        let m = parse(text)?;
        let diagnostics = validate(&m);
        if !diagnostics.is_empty() {
            return Err(HubError::Invalid(diagnostics));
        }
        let mut st = self.lock();
        st.broker.register_manifest(&m.manifest_hash);
        st.manifests
            .insert(m.manifest_hash.clone(), (m.clone(), text.to_string()));
        Ok(m)
    }

    pub fn authorize(&self, input: AuthorizeInput, now: DateTime<Utc>) -> Result<AuthorizeOutcome, HubError> {
        if input.client_id.is_empty() || input.redirect_uri.is_empty() {
            return Err(HubError::BadRequest("client_id and redirect_uri are required".into()));
        }
        if input.code_challenge.is_empty() {
            return Err(HubError::BadRequest("code_challenge is required".into()));
        }
        let base = self.register_manifest(&input.manifest_text)?;
        let bound = bind_access(base.clone(), input.access_type, input.schedule.clone());
        let diagnostics = validate(&bound);
        if !diagnostics.is_empty() {
            return Err(HubError::Invalid(diagnostics));
        }
        crate::scheduler::check_schedule(input.access_type, bound.schedule.as_ref(), self.config.min_interval_seconds)
            .map_err(|e| HubError::BadRequest(e.to_string()))?;

        let request = self.lock().broker.create_authorization_request(
            crate::broker::AuthorizationParams {
                client_id: input.client_id.clone(),
                provider_id: input.provider_id.clone(),
                manifest_hash: base.manifest_hash.clone(),
                redirect_uri: input.redirect_uri.clone(),
                access_type: input.access_type,
                schedule: bound.schedule.clone(),
                app_challenge: input.code_challenge.clone(),
            },
        )?;
        let grant_id = request.auth_request_id.clone();

        let (code, echoed) = self
            .connector
            .authorize(&input.provider_id, &request.pkce, &request.state)?;
        let verifier = self
            .lock()
            .broker
            .provider_verifier(&grant_id, &echoed)?
            .to_string();
        let tokens = self
            .connector
            .exchange(&input.provider_id, &code, &verifier, now)?;

        {
            let mut st = self.lock();
            st.broker.complete_provider_leg(&grant_id, &tokens, now)?;
            let mut grant = Grant::pending(
                &grant_id,
                &base.manifest_hash,
                &input.client_id,
                &input.provider_id,
                input.access_type,
                now,
            );
            grant.schedule = bound.schedule.clone();
            grant.endpoint = input.endpoint.clone();
            st.policy.insert(grant)?;
            st.bound.insert(grant_id.clone(), bound);
            st.app_legs.insert(
                grant_id.clone(),
                AppLeg {
                    redirect_uri: input.redirect_uri,
                    state: input.state,
                },
            );
        }

        if self.config.auto_approve {
            let location = self.decide(&grant_id, Decision::Allow, Vec::new(), now)?;
            return Ok(AuthorizeOutcome::Redirect { grant_id, location });
        }
        let console_url = format!("{}/grants/{grant_id}", self.config.console_base);
        Ok(AuthorizeOutcome::Pending { grant_id, console_url })
    }

    /// Records the user's decision; returns the app redirect location.
    pub fn decide(
        &self,
        grant_id: &str,
        decision: Decision,
        constraints: Vec<Constraint>,
        now: DateTime<Utc>,
    ) -> Result<String, HubError> {
        let mut st = self.lock();
        st.policy.decide(grant_id, decision, constraints, now)?;
        let leg = st
            .app_legs
            .get(grant_id)
            .ok_or_else(|| HubError::UnknownGrant(grant_id.into()))?;
        let (redirect, state) = (leg.redirect_uri.clone(), leg.state.clone());
        match decision {
            Decision::Allow => {
                let code = st.broker.issue_code(grant_id, now)?;
                Ok(with_query(&redirect, &[("code", &code), ("state", &state)]))
            }
            Decision::Deny => {
                st.broker.revoke(grant_id);
                Ok(with_query(&redirect, &[("error", "access_denied"), ("state", &state)]))
            }
        }
    }

    /// Exchanges the app's code. The returned activation tells the caller
    /// whether an install-time run is due.
    pub fn exchange_token(
        &self,
        code: &str,
        code_verifier: &str,
        client_id: &str,
        endpoint: Option<&str>,
        now: DateTime<Utc>,
    ) -> Result<(TokenResponse, Activation), HubError> {
        let mut st = self.lock();
        let CodeExchange {
            grant_id,
            hub_token,
            id_token,
            public_key_jwk,
        } = st.broker.exchange_code(code, code_verifier, client_id, now)?;
        let grant = st
            .policy
            .get_mut(&grant_id)
            .ok_or_else(|| HubError::UnknownGrant(grant_id.clone()))?;
        if let Some(ep) = endpoint {
            grant.endpoint = Some(ep.to_string());
        }
        let binding = AccessBinding {
            grant_id: grant_id.clone(),
            pattern: grant.access_type,
            schedule: grant.schedule.clone(),
            endpoint: grant.endpoint.clone().unwrap_or_default(),
        };
        let manifest_id = grant.manifest_hash.clone();
        let activation = st
            .scheduler
            .activate(binding, now)
            .map_err(|e| HubError::BadRequest(e.to_string()))?;
        Ok((
            TokenResponse {
                access_token: hub_token.token,
                token_type: "Bearer".into(),
                expires_in: (hub_token.expires_at - now).num_seconds(),
                id_token,
                hub_public_key: public_key_jwk,
                grant_id,
                manifest_id,
            },
            activation,
        ))
    }

    /// Rotates the token, enforces the access pattern and constraints, runs
    /// the pipeline and delivers.
    pub fn query(
        &self,
        token: &str,
        manifest_id: &str,
        request: Option<ActionRequest>,
        now: DateTime<Utc>,
    ) -> Result<QueryResponse, QueryFailure> {
        let (grant_id, next) = {
            let mut st = self.lock();
            match st.broker.consume_and_rotate(token, now) {
                Ok(r) => (r.grant_id, r.next.token),
                Err(e) => {
                    if let Some(grant) = e.grant_id().and_then(|g| st.policy.get(g)).cloned() {
                        let outcome = match e {
                            TokenError::TokenRevoked(_) => Outcome::DeniedRevoked,
                            _ => Outcome::Error,
                        };
                        let entry = log_entry(&grant, Initiator::AppQuery, outcome, now).detail(e.to_string());
                        let _ = st.policy.log(entry);
                    }
                    return Err(QueryFailure::new(401, "invalid_token", e.to_string()));
                }
            }
        };
        let (grant, action_pipeline) = {
            let st = self.lock();
            let grant = st
                .policy
                .get(&grant_id)
                .cloned()
                .ok_or_else(|| QueryFailure::new(401, "invalid_token", "grant is gone"))?;
            let action = st.bound.get(&grant_id).is_some_and(Manifest::is_action_pipeline);
            if let Err(rejection) = st.scheduler.admit_query(&grant_id) {
                let status = match rejection {
                    QueryRejection::WrongPattern(_) => 409,
                    QueryRejection::Unbound => 403,
                };
                return Err(QueryFailure::new(status, "wrong_access_pattern", rejection.to_string())
                    .with_token(&next));
            }
            (grant, action)
        };
        if grant.manifest_hash != manifest_id {
            return Err(QueryFailure::new(400, "manifest_mismatch", "token is not bound to this manifest")
                .with_token(&next));
        }
        if action_pipeline && request.is_none() {
            return Err(QueryFailure::new(400, "missing_request", "this manifest needs an action request")
                .with_token(&next));
        }
        if !action_pipeline && request.is_some() {
            return Err(QueryFailure::new(400, "unexpected_request", "this manifest does not accept action requests")
                .with_token(&next));
        }

        match self.run(&grant_id, Initiator::AppQuery, request, now) {
            RunOutcome::Delivered { delivery_id, result } => Ok(QueryResponse {
                status: QueryStatus::Delivered,
                token: next,
                delivery_id,
                reason: None,
                records_out: result.emitted.len(),
            }),
            RunOutcome::Denied(reason @ (DenyReason::Revoked | DenyReason::Pending)) => {
                let mut f = QueryFailure::new(403, "denied", format!("grant is {reason}")).with_token(&next);
                f.reason = Some(reason.to_string());
                Err(f)
            }
            RunOutcome::Denied(reason) => {
                let mut f = QueryFailure::new(403, "denied", format!("constraint {reason} refused the request"))
                    .with_token(&next);
                f.reason = Some(reason.to_string());
                Err(f)
            }
            RunOutcome::Failed(message) => {
                Err(QueryFailure::new(502, "delivery_failed", message).with_token(&next))
            }
        }
    }

    /// One constrained pipeline run with logging. Used by queries, the
    /// scheduler and install-time activation.
    pub fn run(
        &self,
        grant_id: &str,
        initiator: Initiator,
        request: Option<ActionRequest>,
        now: DateTime<Utc>,
    ) -> RunOutcome {
        let prepared = {
            let mut st = self.lock();
            let Some(grant) = st.policy.get(grant_id).cloned() else {
                return RunOutcome::Denied(DenyReason::Revoked);
            };
            match st.policy.reserve(grant_id, now) {
                Err(reason) => {
                    let outcome = match reason {
                        DenyReason::Revoked => Outcome::DeniedRevoked,
                        _ => Outcome::DeniedConstraint,
                    };
                    let grant = st.policy.get(grant_id).cloned().unwrap_or(grant);
                    let _ = st
                        .policy
                        .log(log_entry(&grant, initiator, outcome, now).detail(reason.to_string()));
                    return RunOutcome::Denied(reason);
                }
                Ok(reservation) => {
                    let manifest = st
                        .bound
                        .get(grant_id)
                        .ok_or_else(|| "grant has no manifest".to_string())
                        .and_then(|m| apply_resource_constraints(&grant, m).map_err(|e| e.to_string()));
                    let tokens = self.provider_tokens(&mut st, &grant.provider_id, now);
                    (grant, reservation, manifest, tokens)
                }
            }
        };
        let (grant, reservation, manifest, tokens) = prepared;

        let executed = manifest.and_then(|m| {
            let tokens = tokens.map_err(|e| e.to_string())?;
            let provider = GrantProvider {
                connector: self.connector.as_ref(),
                provider_id: &grant.provider_id,
                access_token: &tokens.access_token,
            };
            let delivery = SignedDelivery {
                hub: self,
                grant: &grant,
                now,
            };
            let mut ctx = ExecutionContext::new(now, &provider, &delivery)
                .with_seed(self.config.noise_seed.unwrap_or_else(|| u64::from_le_bytes(pkce::random_bytes())));
            if let Some(r) = request {
                ctx = ctx.with_action(r);
            }
            let action_type = if m.sink().is_some_and(|s| s.op_type == OperatorType::Write) {
                ActionType::Write
            } else {
                ActionType::Read
            };
            execute(&m, &ctx)
                .map(|r| (r, action_type))
                .map_err(|e| match e {
                    ExecError::Delivery(d) => d.to_string(),
                    other => other.to_string(),
                })
        });

        let mut st = self.lock();
        match executed {
            Ok((result, action_type)) => {
                st.policy.commit(reservation);
                let mut entry = log_entry(&grant, initiator, Outcome::Delivered, now);
                entry.action_type = action_type;
                entry.records_out = result.stats.output_count;
                entry.bytes_out = result.stats.output_bytes;
                if action_type == ActionType::Write && result.emitted.is_empty() {
                    entry.detail = Some("no action passed the manifest".into());
                }
                let _ = st.policy.log(entry);
                RunOutcome::Delivered {
                    delivery_id: result.receipt.clone(),
                    result: Box::new(result),
                }
            }
            Err(message) => {
                st.policy.release(reservation);
                let _ = st
                    .policy
                    .log(log_entry(&grant, initiator, Outcome::Error, now).detail(message.clone()));
                RunOutcome::Failed(message)
            }
        }
    }

    fn provider_tokens(
        &self,
        st: &mut State,
        provider_id: &str,
        now: DateTime<Utc>,
    ) -> Result<ProviderTokenSet, ProviderError> {
        let tokens = st
            .broker
            .provider_tokens(provider_id, now)
            .map_err(|_| ProviderError::NoCredentials(provider_id.into()))?;
        if tokens.expires_at - now > TimeDelta::minutes(5) {
            return Ok(tokens);
        }
        let Some(refresh) = tokens.refresh_token.as_deref() else {
            return Ok(tokens);
        };
        let renewed = self.connector.refresh(provider_id, refresh, now)?;
        st.broker
            .vault()
            .store_tokens(&renewed, now)
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        Ok(renewed)
    }

    /// Install-time activation: runs once, then the binding is consumed.
    pub fn run_install(&self, grant_id: &str, now: DateTime<Utc>) -> Option<RunOutcome> {
        {
            let st = self.lock();
            let binding = st.scheduler.binding(grant_id)?;
            if binding.pattern != AccessPattern::InstallTime || st.scheduler.is_consumed(grant_id) {
                return None;
            }
        }
        let outcome = self.run(grant_id, Initiator::Install, None, now);
        self.lock().scheduler.mark_consumed(grant_id);
        Some(outcome)
    }

    /// Fires every scheduled grant that is due.
    pub fn tick(&self, now: DateTime<Utc>) -> Vec<(String, RunOutcome)> {
        let due = self.lock().scheduler.tick(now);
        due.into_iter()
            .map(|g| {
                let outcome = self.run(&g, Initiator::Schedule, None, now);
                (g, outcome)
            })
            .collect()
    }

    /// One coalesced delivery per scheduled grant that missed runs while
    /// the hub was offline.
    pub fn catch_up(
        &self,
        offline_from: DateTime<Utc>,
        offline_to: DateTime<Utc>,
    ) -> Vec<(String, RunOutcome)> {
        let missed = self.lock().scheduler.catch_up(offline_from, offline_to);
        missed
            .into_iter()
            .map(|c| {
                let outcome = self.run(&c.grant_id, Initiator::Schedule, None, offline_to);
                (c.grant_id, outcome)
            })
            .collect()
    }

    pub fn revoke(&self, grant_id: &str, now: DateTime<Utc>) -> Result<Grant, HubError> {
        let mut st = self.lock();
        let grant = st.policy.revoke(grant_id, now)?;
        st.broker.revoke(grant_id);
        st.scheduler.remove(grant_id);
        Ok(grant)
    }

    pub fn set_constraints(&self, grant_id: &str, constraints: Vec<Constraint>) -> Result<Grant, HubError> {
        Ok(self.lock().policy.set_constraints(grant_id, constraints)?)
    }

    /// The app a hub token was issued to, without consuming it.
    pub fn client_for_token(&self, token: &str) -> Option<String> {
        let st = self.lock();
        let (grant_id, _, _) = st.broker.inspect_token(token)?;
        st.policy.get(&grant_id).map(|g| g.app_id.clone())
    }

    pub fn grants(&self) -> Vec<Grant> {
        self.lock().policy.grants().cloned().collect()
    }

    pub fn grant(&self, grant_id: &str) -> Option<Grant> {
        self.lock().policy.get(grant_id).cloned()
    }

    pub fn grant_detail(&self, grant_id: &str) -> Result<GrantDetail, HubError> {
        let st = self.lock();
        let grant = st
            .policy
            .get(grant_id)
            .cloned()
            .ok_or_else(|| HubError::UnknownGrant(grant_id.into()))?;
        let (manifest, text) = st
            .manifests
            .get(&grant.manifest_hash)
            .cloned()
            .ok_or_else(|| HubError::UnknownManifest(grant.manifest_hash.clone()))?;
        let steps = describe(&manifest).map_err(|e| HubError::Invalid(e.diagnostics))?;
        let token_generation = st
            .broker
            .token_chain(grant_id)
            .iter()
            .rev()
            .find(|(_, s)| *s == crate::broker::TokenStatus::Active)
            .map(|(g, _)| *g);
        Ok(GrantDetail {
            grant,
            manifest_title: manifest.title.clone(),
            manifest_description: manifest.description.clone(),
            manifest_text: text,
            steps,
            token_generation,
        })
    }

    pub fn token_chain(&self, grant_id: &str) -> Vec<(u64, crate::broker::TokenStatus)> {
        self.lock().broker.token_chain(grant_id)
    }

    pub fn logs(&self, filter: &LogFilter) -> Vec<AccessLogEntry> {
        self.lock().policy.query_logs(filter)
    }

    /// Dry run against the provider: no delivery, no write, logged as a preview.
    pub fn preview(&self, grant_id: &str, now: DateTime<Utc>) -> Result<Preview, HubError> {
        let (grant, manifest, tokens) = {
            let mut st = self.lock();
            let grant = st
                .policy
                .get(grant_id)
                .cloned()
                .ok_or_else(|| HubError::UnknownGrant(grant_id.into()))?;
            let manifest = st
                .bound
                .get(grant_id)
                .cloned()
                .ok_or_else(|| HubError::UnknownGrant(grant_id.into()))?;
            let tokens = self.provider_tokens(&mut st, &grant.provider_id, now);
            (grant, manifest, tokens)
        };
        let steps = describe(&manifest).map_err(|e| HubError::Invalid(e.diagnostics))?;
        let augmented = apply_resource_constraints(&grant, &manifest)?;
        let mut preview = Preview {
            grant: grant.clone(),
            steps,
            sample_input: Vec::new(),
            sample_output: Vec::new(),
            input_count: 0,
            output_count: 0,
            input_bytes: 0,
            output_bytes: 0,
        };
        if !augmented.is_action_pipeline() {
            let tokens = tokens?;
            let provider = GrantProvider {
                connector: self.connector.as_ref(),
                provider_id: &grant.provider_id,
                access_token: &tokens.access_token,
            };
            let ctx = ExecutionContext::new(now, &provider, &crate::engine::Discard)
                .with_seed(self.config.noise_seed.unwrap_or(0))
                .dry_run();
            let result = execute(&augmented, &ctx).map_err(|e| HubError::BadRequest(e.to_string()))?;
            preview.input_count = result.stats.input_count;
            preview.output_count = result.stats.output_count;
            preview.input_bytes = result.stats.input_bytes;
            preview.output_bytes = result.stats.output_bytes;
            preview.sample_input = preview_input(&result.source_output);
            preview.sample_output = result.emitted.into_iter().take(SAMPLE_OUTPUT).collect();
        }
        let mut entry = log_entry(&grant, Initiator::Console, Outcome::Previewed, now);
        entry.records_out = preview.output_count;
        self.lock().policy.log(entry)?;
        Ok(preview)
    }

    pub fn sync(&self) -> Result<(), HubError> {
        Ok(self.lock().policy.sync_log()?)
    }

    fn deliver(&self, grant: &Grant, data: &[Value], now: DateTime<Utc>) -> Result<Option<String>, DeliveryError> {
        let endpoint = grant.endpoint.clone().unwrap_or_default();
        let fail = |attempts: u32, message: String| DeliveryError {
            destination: endpoint.clone(),
            attempts,
            message,
        };
        if endpoint.is_empty() {
            return Err(fail(0, "grant has no delivery endpoint".into()));
        }
        let envelope = DeliveryEnvelope {
            manifest_id: grant.manifest_hash.clone(),
            grant_id: grant.grant_id.clone(),
            access_type: grant.access_type.to_string(),
            issued_at: rfc3339(now),
            delivery_id: format!("d_{}", pkce::random_token(12)),
            data: Value::Array(data.to_vec()),
        };
        let body = serde_json::to_vec(&envelope).expect("envelopes serialize");
        let signature = self
            .lock()
            .broker
            .sign_payload(&grant.grant_id, &body)
            .map_err(|e| fail(0, e.to_string()))?;
        let sleeper = self.config.sleeper.clone();
        self.config
            .retry
            .run(|d| sleeper(d), |_| self.transport.send(&endpoint, &body, &signature))
            .map(|()| Some(envelope.delivery_id.clone()))
            .map_err(|(e, attempts)| fail(attempts, e.0))
    }
}

fn preview_input(source: &[Value]) -> Vec<Value> {
    // A single wrapper object such as {"events": [...]} is trimmed per array.
    match source {
        [Value::Object(map)] if map.values().all(Value::is_array) => {
            let trimmed = map
                .iter()
                .map(|(k, v)| {
                    let items = v.as_array().map(|a| a.iter().take(SAMPLE_INPUT).cloned().collect());
                    (k.clone(), Value::Array(items.unwrap_or_default()))
                })
                .collect();
            vec![Value::Object(trimmed)]
        }
        other => other.iter().take(SAMPLE_INPUT).cloned().collect(),
    }
}

fn log_entry(grant: &Grant, initiator: Initiator, outcome: Outcome, now: DateTime<Utc>) -> AccessLogEntry {
    AccessLogEntry {
        timestamp: now,
        initiator,
        grant_id: grant.grant_id.clone(),
        manifest_hash: grant.manifest_hash.clone(),
        action_type: ActionType::Read,
        outcome,
        records_out: 0,
        bytes_out: 0,
        detail: None,
    }
}

trait WithDetail {
    fn detail(self, d: String) -> Self;
}

impl WithDetail for AccessLogEntry {
    fn detail(mut self, d: String) -> Self {
        self.detail = Some(d);
        self
    }
}

struct GrantProvider<'a> {
    connector: &'a dyn Connector,
    provider_id: &'a str,
    access_token: &'a str,
}

impl ProviderClient for GrantProvider<'_> {
    fn pull(&self, resource_type: &str, query: Option<&str>) -> Result<Value, ProviderError> {
        self.connector
            .pull(self.provider_id, self.access_token, resource_type, query)
    }

    fn write(&self, resource_type: &str, request: &ActionRequest) -> Result<Value, ProviderError> {
        self.connector
            .write(self.provider_id, self.access_token, resource_type, request)
    }
}

struct SignedDelivery<'a> {
    hub: &'a Hub,
    grant: &'a Grant,
    now: DateTime<Utc>,
}

impl DeliveryClient for SignedDelivery<'_> {
    fn post(&self, _destination: &str, data: &[Value]) -> Result<Option<String>, DeliveryError> {
        self.hub.deliver(self.grant, data, self.now)
    }
}

impl GrantStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            GrantStatus::Pending => "pending",
            GrantStatus::Active => "active",
            GrantStatus::Revoked => "revoked",
            GrantStatus::Expired => "expired",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::MemoryKeyStore;
    use crate::manifest::examples;
    use serde_json::json;

    struct Provider {
        journal: Mutex<Vec<ActionRequest>>,
    }

    impl Connector for Provider {
        fn authorize(&self, _: &str, _: &PkceChallenge, state: &str) -> Result<(String, String), ProviderError> {
            Ok(("pcode".into(), state.into()))
        }
        fn exchange(&self, p: &str, _: &str, _: &str, now: DateTime<Utc>) -> Result<ProviderTokenSet, ProviderError> {
            Ok(ProviderTokenSet {
                provider_id: p.into(),
                access_token: "at".into(),
                refresh_token: Some("rt".into()),
                id_token: None,
                expires_at: now + TimeDelta::days(365),
            })
        }
        fn refresh(&self, p: &str, _: &str, now: DateTime<Utc>) -> Result<ProviderTokenSet, ProviderError> {
            self.exchange(p, "", "", now)
        }
        fn pull(&self, _: &str, _: &str, _: &str, _: Option<&str>) -> Result<Value, ProviderError> {
            Ok(json!({"events": [
                {"start": {"dateTime": "2099-01-01T10:00:00Z"}, "location": "https://zoom.us/j/1"},
                {"start": {"dateTime": "2099-01-02T10:00:00Z"}, "location": "office"},
                {"start": {"dateTime": "2001-01-01T10:00:00Z"}, "location": "https://zoom.us/j/2"}
            ]}))
        }
        fn write(&self, _: &str, _: &str, _: &str, r: &ActionRequest) -> Result<Value, ProviderError> {
            self.journal.lock().unwrap().push(r.clone());
            Ok(json!({"ok": true}))
        }
    }

    #[derive(Default)]
    struct Inbox(Mutex<Vec<(Vec<u8>, String)>>, std::sync::atomic::AtomicU32);

    impl Transport for Inbox {
        fn send(&self, _: &str, body: &[u8], sig: &str) -> Result<(), TransportError> {
            if self.1.load(std::sync::atomic::Ordering::SeqCst) > 0 {
                self.1.fetch_sub(1, std::sync::atomic::Ordering::SeqCst);
                return Err(TransportError("connection refused".into()));
            }
            self.0.lock().unwrap().push((body.to_vec(), sig.into()));
            Ok(())
        }
    }

    fn t0() -> DateTime<Utc> {
        "2025-06-01T10:00:00Z".parse().unwrap()
    }

    fn hub(auto: bool) -> (Hub, Arc<Provider>, Arc<Inbox>) {
        let provider = Arc::new(Provider { journal: Mutex::new(Vec::new()) });
        let inbox = Arc::new(Inbox::default());
        let config = HubConfig {
            auto_approve: auto,
            retry: RetryPolicy::immediate(3),
            sleeper: Arc::new(|_| {}),
            noise_seed: Some(1),
            ..HubConfig::default()
        };
        let vault = Vault::in_memory(&MemoryKeyStore::random()).unwrap();
        let h = Hub::new(config, vault, AccessLog::in_memory(), provider.clone(), inbox.clone());
        (h, provider, inbox)
    }

    fn input(text: &str, access: AccessPattern, schedule: Option<Schedule>) -> (AuthorizeInput, String) {
        let verifier = pkce::generate_verifier();
        (
            AuthorizeInput {
                client_id: "app".into(),
                provider_id: "google".into(),
                manifest_text: text.into(),
                redirect_uri: "http://app/cb".into(),
                state: "xyz".into(),
                code_challenge: pkce::challenge_for(&verifier),
                access_type: access,
                schedule,
                endpoint: Some("http://app/data".into()),
            },
            verifier,
        )
    }

    fn code_of(location: &str) -> String {
        let q = location.split_once("code=").unwrap().1;
        q.split('&').next().unwrap().to_string()
    }

    fn install(h: &Hub, text: &str, access: AccessPattern, schedule: Option<Schedule>) -> TokenResponse {
        let (inp, verifier) = input(text, access, schedule);
        let AuthorizeOutcome::Redirect { location, .. } = h.authorize(inp, t0()).unwrap() else {
            panic!("expected redirect");
        };
        assert!(location.contains("state=xyz"));
        h.exchange_token(&code_of(&location), &verifier, "app", None, t0()).unwrap().0
    }

    #[test]
    fn user_driven_query_delivers_signed_envelope() {
        let (h, _, inbox) = hub(true);
        let tok = install(&h, examples::ZOOM, AccessPattern::UserDriven, None);
        assert_eq!(tok.token_type, "Bearer");
        let r = h.query(&tok.access_token, &tok.manifest_id, None, t0()).unwrap();
        assert_eq!(r.status, QueryStatus::Delivered);
        assert_eq!(r.records_out, 1);
        let sent = inbox.0.lock().unwrap();
        let (body, sig) = &sent[0];
        assert!(crate::broker::jws::verify_detached(sig, &tok.hub_public_key, body));
        let env: DeliveryEnvelope = serde_json::from_slice(body).unwrap();
        assert_eq!(Some(env.delivery_id), r.delivery_id);
        assert_eq!(env.data.as_array().unwrap().len(), 1);
        drop(sent);
        let reuse = h.query(&tok.access_token, &tok.manifest_id, None, t0()).unwrap_err();
        assert_eq!(reuse.http_status, 401);
        let ok = h.query(&r.token, &tok.manifest_id, None, t0()).unwrap();
        assert_eq!(ok.status, QueryStatus::Delivered);
    }

    #[test]
    fn pending_until_decided() {
        let (h, _, _) = hub(false);
        let (inp, verifier) = input(examples::ZOOM, AccessPattern::UserDriven, None);
        let AuthorizeOutcome::Pending { grant_id, .. } = h.authorize(inp, t0()).unwrap() else {
            panic!("expected pending");
        };
        let preview = h.preview(&grant_id, t0()).unwrap();
        assert_eq!(preview.steps.len(), 5);
        assert_eq!(preview.input_count, 3);
        assert_eq!(preview.output_count, 1);
        let loc = h.decide(&grant_id, Decision::Allow, vec![Constraint::one_time()], t0()).unwrap();
        let tok = h.exchange_token(&code_of(&loc), &verifier, "app", None, t0()).unwrap().0;
        let r = h.query(&tok.access_token, &tok.manifest_id, None, t0()).unwrap();
        let denied = h.query(&r.token, &tok.manifest_id, None, t0()).unwrap_err();
        assert_eq!(denied.http_status, 403);
        assert_eq!(denied.reason.as_deref(), Some("usage_total"));
        let logs = h.logs(&LogFilter::default());
        let outcomes: Vec<Outcome> = logs.iter().map(|e| e.outcome).collect();
        assert_eq!(outcomes, [Outcome::Previewed, Outcome::Delivered, Outcome::DeniedConstraint]);
    }

    #[test]
    fn denial_redirects_with_error() {
        let (h, _, _) = hub(false);
        let (inp, _) = input(examples::ZOOM, AccessPattern::UserDriven, None);
        let AuthorizeOutcome::Pending { grant_id, .. } = h.authorize(inp, t0()).unwrap() else {
            panic!("expected pending");
        };
        let loc = h.decide(&grant_id, Decision::Deny, vec![], t0()).unwrap();
        assert_eq!(loc, "http://app/cb?error=access_denied&state=xyz");
    }

    #[test]
    fn invalid_manifest_is_rejected() {
        let (h, _, _) = hub(true);
        let (inp, _) = input("TITLE: x\nPIPELINE: A\nA(type: \"Nope\")\n", AccessPattern::UserDriven, None);
        assert!(matches!(h.authorize(inp, t0()), Err(HubError::Invalid(_) | HubError::Parse(_))));
        let (inp, _) = input(examples::ZOOM, AccessPattern::Scheduled, None);
        assert!(matches!(h.authorize(inp, t0()), Err(HubError::BadRequest(_))));
    }

    #[test]
    fn install_time_and_scheduled() {
        let (h, _, inbox) = hub(true);
        let tok = install(&h, examples::ZOOM, AccessPattern::InstallTime, None);
        assert!(h.run_install(&tok.grant_id, t0()).is_some());
        assert!(h.run_install(&tok.grant_id, t0()).is_none());
        let q = h.query(&tok.access_token, &tok.manifest_id, None, t0()).unwrap_err();
        assert_eq!(q.http_status, 409);
        assert_eq!(inbox.0.lock().unwrap().len(), 1);

        let s = install(&h, examples::ZOOM, AccessPattern::Scheduled, Some(Schedule::every(60)));
        let mut fired = 0;
        for i in 1..=10 {
            fired += h.tick(t0() + TimeDelta::seconds(60 * i)).len();
        }
        assert_eq!(fired, 10);
        h.revoke(&s.grant_id, t0() + TimeDelta::seconds(600)).unwrap();
        for i in 11..=20 {
            assert!(h.tick(t0() + TimeDelta::seconds(60 * i)).is_empty());
        }
        assert_eq!(inbox.0.lock().unwrap().len(), 11);
    }

    #[test]
    fn delivery_retries_then_fails() {
        let (h, _, inbox) = hub(true);
        let tok = install(&h, examples::ZOOM, AccessPattern::UserDriven, None);
        inbox.1.store(2, std::sync::atomic::Ordering::SeqCst);
        let r = h.query(&tok.access_token, &tok.manifest_id, None, t0()).unwrap();
        assert_eq!(r.status, QueryStatus::Delivered);
        inbox.1.store(3, std::sync::atomic::Ordering::SeqCst);
        let f = h.query(&r.token, &tok.manifest_id, None, t0()).unwrap_err();
        assert_eq!(f.http_status, 502);
        assert!(f.token.is_some());
        let last = h.logs(&LogFilter::default()).pop().unwrap();
        assert_eq!(last.outcome, Outcome::Error);
    }

    #[test]
    fn write_pipeline_guards_actions() {
        let (h, provider, _) = hub(true);
        let tok = install(&h, examples::NOTABILITY, AccessPattern::UserDriven, None);
        let mut token = tok.access_token.clone();
        for folder in ["folderId", "elsewhere", "folderId"] {
            let req = ActionRequest::new("create").param("parents", json!(folder));
            let r = h.query(&token, &tok.manifest_id, Some(req), t0()).unwrap();
            token = r.token;
        }
        let journal = provider.journal.lock().unwrap();
        assert_eq!(journal.len(), 2);
        let missing = h.query(&token, &tok.manifest_id, None, t0()).unwrap_err();
        assert_eq!(missing.http_status, 400);
    }
}
