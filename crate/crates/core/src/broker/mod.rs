//! Credentials and cryptography: the provider-side authorization leg, the
//! encrypted vault, hub-issued rotating tokens and per-grant signing keys.

pub mod jws;
pub mod pkce;
pub mod tokens;
pub mod vault;

use std::collections::{HashMap, HashSet};

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::AccessPattern;
use crate::scheduler::{check_schedule, Schedule, ScheduleError, DEFAULT_MIN_INTERVAL_SECONDS};
pub use jws::{verify_detached, Jwk, JwsError, SigningKey};
pub use pkce::PkceChallenge;
pub use tokens::{HubToken, Rotation, TokenError, TokenStatus, TokenTable, DEFAULT_TOKEN_TTL};
pub use vault::{FileKeyStore, KeyStore, MemoryKeyStore, ProviderTokenSet, Vault, VaultEntry, VaultError};

pub const CODE_TTL: TimeDelta = TimeDelta::minutes(10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorizationParams {
    pub client_id: String,
    pub provider_id: String,
    pub manifest_hash: String,
    pub redirect_uri: String,
    pub access_type: AccessPattern,
    pub schedule: Option<Schedule>,
    /// The app's S256 challenge for its own code exchange.
    pub app_challenge: String,
}

/// The provider-side request: the hub's own PKCE challenge and state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationRequest {
    pub auth_request_id: String,
    pub pkce: PkceChallenge,
    pub state: String,
}

#[derive(Debug, Clone)]
struct Pending {
    params: AuthorizationParams,
    provider_verifier: String,
    state: String,
    id_token: Option<String>,
}

#[derive(Debug, Clone)]
struct CodeRecord {
    auth_request_id: String,
    issued_at: DateTime<Utc>,
    used: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeExchange {
    pub grant_id: String,
    pub hub_token: HubToken,
    pub id_token: Option<String>,
    pub public_key_jwk: Jwk,
}

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("manifest {0} is not registered")]
    UnknownManifest(String),
    #[error("bad schedule: {0}")]
    BadSchedule(#[from] ScheduleError),
    #[error("unknown authorization request")]
    UnknownAuthRequest,
    #[error("state does not match the authorization request")]
    StateMismatch,
    #[error("unknown authorization code")]
    UnknownCode,
    #[error("code verifier does not match the challenge")]
    PkceMismatch,
    #[error("authorization code was already used")]
    CodeReplayed,
    #[error("authorization code has expired")]
    ExpiredCode,
    #[error("code was issued to a different client")]
    ClientMismatch,
    #[error("unknown grant {0}")]
    UnknownGrant(String),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Vault(#[from] VaultError),
    #[error(transparent)]
    Jws(#[from] JwsError),
}

fn key_service(grant_id: &str) -> String {
    format!("grant-key:{grant_id}")
}

pub struct Broker {
    vault: Vault,
    tokens: TokenTable,
    manifests: HashSet<String>,
    pending: HashMap<String, Pending>,
    codes: HashMap<String, CodeRecord>,
    keys: HashMap<String, SigningKey>,
    min_interval: u64,
}

impl Broker {
    pub fn new(vault: Vault) -> Self {
        Self {
            vault,
            tokens: TokenTable::default(),
            manifests: HashSet::new(),
            pending: HashMap::new(),
            codes: HashMap::new(),
            keys: HashMap::new(),
            min_interval: DEFAULT_MIN_INTERVAL_SECONDS,
        }
    }

    pub fn with_token_ttl(mut self, ttl: TimeDelta) -> Self {
        self.tokens = TokenTable::new(ttl);
        self
    }

    pub fn with_min_interval(mut self, seconds: u64) -> Self {
        self.min_interval = seconds;
        self
    }

    pub fn register_manifest(&mut self, manifest_hash: &str) {
        self.manifests.insert(manifest_hash.into());
    }

    pub fn create_authorization_request(
        &mut self,
        params: AuthorizationParams,
    ) -> Result<AuthorizationRequest, BrokerError> {
        if !self.manifests.contains(&params.manifest_hash) {
            return Err(BrokerError::UnknownManifest(params.manifest_hash));
        }
        check_schedule(params.access_type, params.schedule.as_ref(), self.min_interval)?;
        let auth_request_id = format!("g_{}", pkce::random_token(12));
        let provider_verifier = pkce::generate_verifier();
        let state = pkce::random_token(16);
        let request = AuthorizationRequest {
            auth_request_id: auth_request_id.clone(),
            pkce: PkceChallenge::for_verifier(&provider_verifier),
            state: state.clone(),
        };
        self.pending.insert(
            auth_request_id,
            Pending {
                params,
                provider_verifier,
                state,
                id_token: None,
            },
        );
        Ok(request)
    }

    pub fn params(&self, auth_request_id: &str) -> Option<&AuthorizationParams> {
        self.pending.get(auth_request_id).map(|p| &p.params)
    }

    /// The verifier the hub presents to the provider's token endpoint,
    /// released only against the matching state.
    pub fn provider_verifier(&self, auth_request_id: &str, state: &str) -> Result<&str, BrokerError> {
        let p = self
            .pending
            .get(auth_request_id)
            .ok_or(BrokerError::UnknownAuthRequest)?;
        if p.state != state {
            return Err(BrokerError::StateMismatch);
        }
        Ok(&p.provider_verifier)
    }

    /// Stores the provider's tokens in the vault, keyed by provider.
    pub fn complete_provider_leg(
        &mut self,
        auth_request_id: &str,
        tokens: &ProviderTokenSet,
        now: DateTime<Utc>,
    ) -> Result<(), BrokerError> {
        let p = self
            .pending
            .get_mut(auth_request_id)
            .ok_or(BrokerError::UnknownAuthRequest)?;
        p.id_token = tokens.id_token.clone();
        self.vault.store_tokens(tokens, now)?;
        Ok(())
    }

    /// A single-use code for the app, valid for ten minutes.
    pub fn issue_code(&mut self, auth_request_id: &str, now: DateTime<Utc>) -> Result<String, BrokerError> {
        if !self.pending.contains_key(auth_request_id) {
            return Err(BrokerError::UnknownAuthRequest);
        }
        let code = pkce::random_token(32);
        self.codes.insert(
            code.clone(),
            CodeRecord {
                auth_request_id: auth_request_id.into(),
                issued_at: now,
                used: false,
            },
        );
        Ok(code)
    }

    pub fn exchange_code(
        &mut self,
        code: &str,
        code_verifier: &str,
        client_id: &str,
        now: DateTime<Utc>,
    ) -> Result<CodeExchange, BrokerError> {
        let record = self.codes.get(code).ok_or(BrokerError::UnknownCode)?;
        if record.used {
            return Err(BrokerError::CodeReplayed);
        }
        if now - record.issued_at >= CODE_TTL {
            return Err(BrokerError::ExpiredCode);
        }
        let grant_id = record.auth_request_id.clone();
        let pending = self
            .pending
            .get(&grant_id)
            .ok_or(BrokerError::UnknownAuthRequest)?;
        if pending.params.client_id != client_id {
            return Err(BrokerError::ClientMismatch);
        }
        if !pkce::verify(code_verifier, &pending.params.app_challenge) {
            return Err(BrokerError::PkceMismatch);
        }
        let id_token = pending.id_token.clone();
        self.codes.get_mut(code).expect("present above").used = true;

        let key = SigningKey::generate(&format!("k_{grant_id}"))?;
        self.vault.put(&key_service(&grant_id), &key.pkcs8, None)?;
        let public_key_jwk = key.jwk.clone();
        self.keys.insert(grant_id.clone(), key);
        let hub_token = self.tokens.issue(&grant_id, now);
        Ok(CodeExchange {
            grant_id,
            hub_token,
            id_token,
            public_key_jwk,
        })
    }

    pub fn consume_and_rotate(&mut self, token: &str, now: DateTime<Utc>) -> Result<Rotation, TokenError> {
        self.tokens.consume_and_rotate(token, now)
    }

    pub fn inspect_token(&self, token: &str) -> Option<(String, u64, TokenStatus)> {
        self.tokens.inspect(token)
    }

    pub fn token_chain(&self, grant_id: &str) -> Vec<(u64, TokenStatus)> {
        self.tokens.chain(grant_id)
    }

    fn signing_key(&mut self, grant_id: &str) -> Result<&SigningKey, BrokerError> {
        if !self.keys.contains_key(grant_id) {
            let pkcs8: Vec<u8> = self
                .vault
                .get(&key_service(grant_id), Utc::now())
                .map_err(|e| match e {
                    VaultError::UnknownService(_) => BrokerError::UnknownGrant(grant_id.into()),
                    other => other.into(),
                })?;
            let key = SigningKey::from_pkcs8(&format!("k_{grant_id}"), &pkcs8)?;
            self.keys.insert(grant_id.into(), key);
        }
        Ok(&self.keys[grant_id])
    }

    pub fn sign_payload(&mut self, grant_id: &str, body: &[u8]) -> Result<String, BrokerError> {
        Ok(self.signing_key(grant_id)?.sign_detached(body)?)
    }

    pub fn public_key(&mut self, grant_id: &str) -> Result<Jwk, BrokerError> {
        Ok(self.signing_key(grant_id)?.jwk.clone())
    }

    /// Revokes every hub token of the grant and forgets pending codes.
    pub fn revoke(&mut self, grant_id: &str) {
        self.tokens.revoke_grant(grant_id);
        self.codes.retain(|_, c| c.auth_request_id != grant_id);
    }

    pub fn provider_tokens(
        &mut self,
        provider_id: &str,
        now: DateTime<Utc>,
    ) -> Result<ProviderTokenSet, VaultError> {
        self.vault.load_tokens(provider_id, now)
    }

    pub fn vault(&mut self) -> &mut Vault {
        &mut self.vault
    }
}
