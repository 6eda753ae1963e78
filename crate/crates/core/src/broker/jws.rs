//! Ed25519 keys and detached compact JWS over a body digest.
//!
//! The signed payload is the ASCII text `base64url(SHA-256(body))`, so a
//! verifier only needs the exact body bytes it received.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ring::digest::{digest, SHA256};
use ring::rand::SystemRandom;
use ring::signature::{Ed25519KeyPair, KeyPair, UnparsedPublicKey, ED25519};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ALG: &str = "EdDSA";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Jwk {
    pub kty: String,
    pub crv: String,
    pub x: String,
    pub kid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alg: Option<String>,
    #[serde(rename = "use", default, skip_serializing_if = "Option::is_none")]
    pub key_use: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JwsError {
    #[error("key material is invalid")]
    BadKey,
}

#[derive(Serialize, Deserialize)]
struct Header {
    alg: String,
    kid: String,
}

/// A signing key in PKCS#8 form plus its public JWK.
#[derive(Debug, Clone)]
pub struct SigningKey {
    pub key_id: String,
    pub pkcs8: Vec<u8>,
    pub jwk: Jwk,
}

impl SigningKey {
    pub fn generate(key_id: &str) -> Result<Self, JwsError> {
        let doc = Ed25519KeyPair::generate_pkcs8(&SystemRandom::new()).map_err(|_| JwsError::BadKey)?;
        Self::from_pkcs8(key_id, doc.as_ref())
    }

    pub fn from_pkcs8(key_id: &str, pkcs8: &[u8]) -> Result<Self, JwsError> {
        let pair = Ed25519KeyPair::from_pkcs8(pkcs8).map_err(|_| JwsError::BadKey)?;
        Ok(Self {
            key_id: key_id.into(),
            pkcs8: pkcs8.to_vec(),
            jwk: Jwk {
                kty: "OKP".into(),
                crv: "Ed25519".into(),
                x: URL_SAFE_NO_PAD.encode(pair.public_key().as_ref()),
                kid: key_id.into(),
                alg: Some(ALG.into()),
                key_use: Some("sig".into()),
            },
        })
    }

    pub fn sign_detached(&self, body: &[u8]) -> Result<String, JwsError> {
        let pair = Ed25519KeyPair::from_pkcs8(&self.pkcs8).map_err(|_| JwsError::BadKey)?;
        let header = serde_json::to_vec(&Header {
            alg: ALG.into(),
            kid: self.key_id.clone(),
        })
        .expect("header serializes");
        let header = URL_SAFE_NO_PAD.encode(header);
        let payload = URL_SAFE_NO_PAD.encode(body_digest(body));
        let signing_input = format!("{header}.{payload}");
        let sig = pair.sign(signing_input.as_bytes());
        Ok(format!("{header}..{}", URL_SAFE_NO_PAD.encode(sig.as_ref())))
    }
}

/// The payload octets: base64url of the body's SHA-256.
pub fn body_digest(body: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(digest(&SHA256, body))
}

/// True iff `jws` is a detached EdDSA signature by `jwk` over `body`.
pub fn verify_detached(jws: &str, jwk: &Jwk, body: &[u8]) -> bool {
    let mut parts = jws.split('.');
    let (Some(header_b64), Some(""), Some(sig_b64), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return false;
    };
    let Some(header) = URL_SAFE_NO_PAD
        .decode(header_b64)
        .ok()
        .and_then(|h| serde_json::from_slice::<Header>(&h).ok())
    else {
        return false;
    };
    if header.alg != ALG || jwk.kty != "OKP" || jwk.crv != "Ed25519" || header.kid != jwk.kid {
        return false;
    }
    let (Ok(public), Ok(sig)) = (URL_SAFE_NO_PAD.decode(&jwk.x), URL_SAFE_NO_PAD.decode(sig_b64))
    else {
        return false;
    };
    let payload = URL_SAFE_NO_PAD.encode(body_digest(body));
    let signing_input = format!("{header_b64}.{payload}");
    UnparsedPublicKey::new(&ED25519, public)
        .verify(signing_input.as_bytes(), &sig)
        .is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_verify_roundtrip() {
        let key = SigningKey::generate("k1").unwrap();
        let body = br#"{"data":[1,2,3]}"#;
        let jws = key.sign_detached(body).unwrap();
        assert_eq!(jws.split('.').nth(1), Some(""));
        assert!(verify_detached(&jws, &key.jwk, body));
        assert!(!verify_detached(&jws, &key.jwk, b"{\"data\":[1,2,4]}"));
    }

    #[test]
    fn header_and_jwk_shape() {
        let key = SigningKey::generate("grant-7").unwrap();
        let jws = key.sign_detached(b"x").unwrap();
        let header: serde_json::Value =
            serde_json::from_slice(&URL_SAFE_NO_PAD.decode(jws.split('.').next().unwrap()).unwrap()).unwrap();
        assert_eq!(header, serde_json::json!({"alg": "EdDSA", "kid": "grant-7"}));
        let jwk = serde_json::to_value(&key.jwk).unwrap();
        assert_eq!(jwk["kty"], "OKP");
        assert_eq!(jwk["use"], "sig");
        assert_eq!(URL_SAFE_NO_PAD.decode(key.jwk.x.as_bytes()).unwrap().len(), 32);
    }

    #[test]
    fn other_key_and_malformed_fail() {
        let a = SigningKey::generate("a").unwrap();
        let b = SigningKey::generate("a").unwrap();
        let jws = a.sign_detached(b"body").unwrap();
        assert!(!verify_detached(&jws, &b.jwk, b"body"));
        for bad in ["", "..", "a.b.c", "a..b..c", &jws.replace("..", ".x.")] {
            assert!(!verify_detached(bad, &a.jwk, b"body"), "{bad}");
        }
    }

    #[test]
    fn pkcs8_reload_keeps_identity() {
        let a = SigningKey::generate("a").unwrap();
        let again = SigningKey::from_pkcs8("a", &a.pkcs8).unwrap();
        assert_eq!(a.jwk, again.jwk);
        assert!(SigningKey::from_pkcs8("a", b"junk").is_err());
    }
}
