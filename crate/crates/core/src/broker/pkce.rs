//! S256 proof keys and random identifiers.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ring::digest::{digest, SHA256};
use ring::rand::{SecureRandom, SystemRandom};
use serde::{Deserialize, Serialize};

pub const METHOD_S256: &str = "S256";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PkceChallenge {
    pub code_challenge: String,
    pub method: String,
}

impl PkceChallenge {
    pub fn for_verifier(verifier: &str) -> Self {
        Self {
            code_challenge: challenge_for(verifier),
            method: METHOD_S256.into(),
        }
    }
}

pub fn random_bytes<const N: usize>() -> [u8; N] {
    let mut buf = [0u8; N];
    SystemRandom::new()
        .fill(&mut buf)
        .expect("system randomness unavailable");
    buf
}

/// `n` random bytes, base64url without padding.
pub fn random_token(n: usize) -> String {
    let mut buf = vec![0u8; n];
    SystemRandom::new()
        .fill(&mut buf)
        .expect("system randomness unavailable");
    URL_SAFE_NO_PAD.encode(buf)
}

/// A fresh 64-character verifier.
pub fn generate_verifier() -> String {
    random_token(48)
}

pub fn challenge_for(verifier: &str) -> String {
    URL_SAFE_NO_PAD.encode(digest(&SHA256, verifier.as_bytes()))
}

/// 43 to 128 characters from `[A-Za-z0-9-._~]`.
pub fn is_valid_verifier(verifier: &str) -> bool {
    (43..=128).contains(&verifier.len())
        && verifier
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~'))
}

pub fn verify(verifier: &str, challenge: &str) -> bool {
    is_valid_verifier(verifier) && challenge_for(verifier) == challenge
}
