//! App-facing hub tokens: one active token per grant, rotated on every use.
//!
//! Only SHA-256 digests of tokens are kept.

use std::collections::HashMap;

use chrono::{DateTime, TimeDelta, Utc};
use ring::digest::{digest, SHA256};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pkce::random_token;

pub const DEFAULT_TOKEN_TTL: TimeDelta = TimeDelta::days(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenStatus {
    Active,
    Rotated,
    Revoked,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HubToken {
    pub token: String,
    pub grant_id: String,
    pub generation: u64,
    pub status: TokenStatus,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("unknown token")]
    UnknownToken,
    #[error("token was already used (generation {generation} of grant {grant_id})")]
    TokenRotatedOut { grant_id: String, generation: u64 },
    #[error("grant {0} has been revoked")]
    TokenRevoked(String),
    #[error("token for grant {0} has expired")]
    TokenExpired(String),
}

impl TokenError {
    pub fn grant_id(&self) -> Option<&str> {
        match self {
            TokenError::UnknownToken => None,
            TokenError::TokenRotatedOut { grant_id, .. }
            | TokenError::TokenRevoked(grant_id)
            | TokenError::TokenExpired(grant_id) => Some(grant_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Record {
    grant_id: String,
    generation: u64,
    status: TokenStatus,
    expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rotation {
    pub grant_id: String,
    pub next: HubToken,
}

fn key(token: &str) -> String {
    hex::encode(digest(&SHA256, token.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenTable {
    ttl_seconds: i64,
    records: HashMap<String, Record>,
    /// grant id -> digest of its newest token
    heads: HashMap<String, String>,
}

impl Default for TokenTable {
    fn default() -> Self {
        Self::new(DEFAULT_TOKEN_TTL)
    }
}

impl TokenTable {
    pub fn new(ttl: TimeDelta) -> Self {
        Self {
            ttl_seconds: ttl.num_seconds(),
            records: HashMap::new(),
            heads: HashMap::new(),
        }
    }

    pub fn ttl(&self) -> TimeDelta {
        TimeDelta::seconds(self.ttl_seconds)
    }

    /// Issues the next token of the grant's chain, retiring the current head.
    pub fn issue(&mut self, grant_id: &str, now: DateTime<Utc>) -> HubToken {
        let generation = match self.heads.get(grant_id).and_then(|k| self.records.get_mut(k)) {
            Some(head) => {
                if head.status == TokenStatus::Active {
                    head.status = TokenStatus::Rotated;
                }
                head.generation + 1
            }
            None => 0,
        };
        let token = random_token(32);
        let record = Record {
            grant_id: grant_id.into(),
            generation,
            status: TokenStatus::Active,
            expires_at: now + self.ttl(),
        };
        let digest = key(&token);
        self.records.insert(digest.clone(), record.clone());
        self.heads.insert(grant_id.into(), digest);
        HubToken {
            token,
            grant_id: grant_id.into(),
            generation,
            status: TokenStatus::Active,
            expires_at: record.expires_at,
        }
    }

    /// Retires `token` and returns its successor. Fails unless `token` is the
    /// active head of its chain.
    pub fn consume_and_rotate(
        &mut self,
        token: &str,
        now: DateTime<Utc>,
    ) -> Result<Rotation, TokenError> {
        let record = self
            .records
            .get_mut(&key(token))
            .ok_or(TokenError::UnknownToken)?;
        let grant_id = record.grant_id.clone();
        match record.status {
            TokenStatus::Active if record.expires_at <= now => {
                record.status = TokenStatus::Expired;
                Err(TokenError::TokenExpired(grant_id))
            }
            TokenStatus::Active => {
                let next = self.issue(&grant_id, now);
                Ok(Rotation { grant_id, next })
            }
            TokenStatus::Rotated => Err(TokenError::TokenRotatedOut {
                grant_id,
                generation: record.generation,
            }),
            TokenStatus::Revoked => Err(TokenError::TokenRevoked(grant_id)),
            TokenStatus::Expired => Err(TokenError::TokenExpired(grant_id)),
        }
    }

    /// Grant and status of a token without consuming it.
    pub fn inspect(&self, token: &str) -> Option<(String, u64, TokenStatus)> {
        self.records
            .get(&key(token))
            .map(|r| (r.grant_id.clone(), r.generation, r.status))
    }

    pub fn revoke_grant(&mut self, grant_id: &str) -> usize {
        let mut n = 0;
        for r in self.records.values_mut() {
            if r.grant_id == grant_id && r.status != TokenStatus::Revoked {
                r.status = TokenStatus::Revoked;
                n += 1;
            }
        }
        n
    }

    /// `(generation, status)` for every token of the grant, oldest first.
    pub fn chain(&self, grant_id: &str) -> Vec<(u64, TokenStatus)> {
        let mut out: Vec<(u64, TokenStatus)> = self
            .records
            .values()
            .filter(|r| r.grant_id == grant_id)
            .map(|r| (r.generation, r.status))
            .collect();
        out.sort_by_key(|(g, _)| *g);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn now() -> DateTime<Utc> {
        "2025-06-01T12:00:00Z".parse().unwrap()
    }

    #[test]
    fn rotation_chain() {
        let mut t = TokenTable::default();
        let mut current = t.issue("g", now());
        let mut seen = vec![current.token.clone()];
        for step in 1..=100u64 {
            let r = t.consume_and_rotate(&current.token, now()).unwrap();
            assert_eq!(r.next.generation, step);
            let chain = t.chain("g");
            assert_eq!(chain.len() as u64, step + 1);
            assert_eq!(chain.iter().filter(|(_, s)| *s == TokenStatus::Active).count(), 1);
            assert!(chain.iter().enumerate().all(|(i, (g, _))| *g == i as u64));
            current = r.next;
            seen.push(current.token.clone());
        }
        for old in &seen[..seen.len() - 1] {
            assert!(matches!(
                t.consume_and_rotate(old, now()),
                Err(TokenError::TokenRotatedOut { .. })
            ));
        }
        assert!(t.consume_and_rotate(&current.token, now()).is_ok());
    }

    #[test]
    fn unknown_revoked_expired() {
        let mut t = TokenTable::new(TimeDelta::hours(1));
        assert_eq!(t.consume_and_rotate("nope", now()), Err(TokenError::UnknownToken));
        let a = t.issue("a", now());
        assert_eq!(t.revoke_grant("a"), 1);
        assert_eq!(t.consume_and_rotate(&a.token, now()), Err(TokenError::TokenRevoked("a".into())));
        let b = t.issue("b", now());
        let late = now() + TimeDelta::hours(2);
        assert_eq!(t.consume_and_rotate(&b.token, late), Err(TokenError::TokenExpired("b".into())));
        assert_eq!(t.inspect(&b.token).unwrap().2, TokenStatus::Expired);
    }

    #[test]
    fn tokens_are_32_random_bytes() {
        let mut t = TokenTable::default();
        let a = t.issue("a", now());
        assert_eq!(a.token.len(), 43);
        assert_ne!(a.token, t.issue("b", now()).token);
    }
}
