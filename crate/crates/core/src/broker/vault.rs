//! Encrypted at-rest storage for provider credentials and hub secrets.
//!
//! Each service's entry is sealed with ChaCha20-Poly1305 under a key derived
//! from the master key by HKDF-SHA256 with the service id as info; the
//! service id is also bound as associated data.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Utc};
use ring::aead::{Aad, LessSafeKey, Nonce, UnboundKey, CHACHA20_POLY1305, NONCE_LEN};
use ring::hkdf::{Salt, HKDF_SHA256};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pkce::random_bytes;

pub const VAULT_FILE: &str = "vault.json";
const KDF_SALT: &[u8] = b"hub-vault-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderTokenSet {
    pub provider_id: String,
    pub access_token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_token: Option<String>,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaultEntry {
    pub service_id: String,
    pub ciphertext: String,
    pub nonce: String,
    pub key_ref: String,
}

#[derive(Debug, Error)]
pub enum VaultError {
    #[error("no vault entry for `{0}`")]
    UnknownService(String),
    #[error("vault entry for `{0}` has expired and was removed")]
    ExpiredEntry(String),
    #[error("vault entry for `{0}` failed authentication")]
    DecryptFailure(String),
    #[error("token set for `{0}` is not storable (empty or already expired)")]
    InvalidTokens(String),
    #[error("vault storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("vault file is malformed: {0}")]
    Malformed(String),
}

/// Source of the 32-byte master key.
pub trait KeyStore: Send + Sync {
    fn master_key(&self) -> Result<[u8; 32], VaultError>;
}

pub struct MemoryKeyStore([u8; 32]);

impl MemoryKeyStore {
    pub fn new(key: [u8; 32]) -> Self {
        Self(key)
    }

    pub fn random() -> Self {
        Self(random_bytes())
    }
}

impl KeyStore for MemoryKeyStore {
    fn master_key(&self) -> Result<[u8; 32], VaultError> {
        Ok(self.0)
    }
}

/// Master key kept in a file next to the vault, created on first use.
pub struct FileKeyStore {
    path: PathBuf,
}

impl FileKeyStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl KeyStore for FileKeyStore {
    fn master_key(&self) -> Result<[u8; 32], VaultError> {
        if let Ok(text) = fs::read_to_string(&self.path) {
            let bytes = URL_SAFE_NO_PAD
                .decode(text.trim())
                .map_err(|e| VaultError::Malformed(e.to_string()))?;
            return bytes
                .try_into()
                .map_err(|_| VaultError::Malformed("master key must be 32 bytes".into()));
        }
        let key: [u8; 32] = random_bytes();
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut opts = fs::OpenOptions::new();
        opts.write(true).create_new(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        opts.open(&self.path)?
            .write_all(URL_SAFE_NO_PAD.encode(key).as_bytes())?;
        Ok(key)
    }
}

#[derive(Serialize, Deserialize)]
struct Sealed<T> {
    expires_at: Option<DateTime<Utc>>,
    value: T,
}

pub struct Vault {
    master: [u8; 32],
    file: Option<PathBuf>,
    entries: BTreeMap<String, VaultEntry>,
}

impl Vault {
    pub fn in_memory(keys: &dyn KeyStore) -> Result<Self, VaultError> {
        Ok(Self {
            master: keys.master_key()?,
            file: None,
            entries: BTreeMap::new(),
        })
    }

    /// Opens (or creates) `dir/vault.json`.
    pub fn open(dir: &Path, keys: &dyn KeyStore) -> Result<Self, VaultError> {
        let file = dir.join(VAULT_FILE);
        let entries = match fs::read(&file) {
            Ok(bytes) => {
                serde_json::from_slice(&bytes).map_err(|e| VaultError::Malformed(e.to_string()))?
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            master: keys.master_key()?,
            file: Some(file),
            entries,
        })
    }

    pub fn contains(&self, service_id: &str) -> bool {
        self.entries.contains_key(service_id)
    }

    pub fn entry(&self, service_id: &str) -> Option<&VaultEntry> {
        self.entries.get(service_id)
    }

    fn key_for(&self, service_id: &str) -> LessSafeKey {
        let prk = Salt::new(HKDF_SHA256, KDF_SALT).extract(&self.master);
        let info = [service_id.as_bytes()];
        let okm = prk
            .expand(&info, &CHACHA20_POLY1305)
            .expect("HKDF output length matches the AEAD key");
        LessSafeKey::new(UnboundKey::from(okm))
    }

    /// Seals any serializable value under the service's key.
    pub fn put<T: Serialize>(
        &mut self,
        service_id: &str,
        value: &T,
        expires_at: Option<DateTime<Utc>>,
    ) -> Result<VaultEntry, VaultError> {
        let mut buf = serde_json::to_vec(&Sealed { expires_at, value })
            .map_err(|e| VaultError::Malformed(e.to_string()))?;
        let nonce: [u8; NONCE_LEN] = random_bytes();
        self.key_for(service_id)
            .seal_in_place_append_tag(
                Nonce::assume_unique_for_key(nonce),
                Aad::from(service_id.as_bytes()),
                &mut buf,
            )
            .map_err(|_| VaultError::DecryptFailure(service_id.into()))?;
        let entry = VaultEntry {
            service_id: service_id.into(),
            ciphertext: URL_SAFE_NO_PAD.encode(&buf),
            nonce: URL_SAFE_NO_PAD.encode(nonce),
            key_ref: format!("hkdf-sha256:{service_id}"),
        };
        self.entries.insert(service_id.into(), entry.clone());
        self.persist()?;
        Ok(entry)
    }

    /// Opens a sealed value; an expired one is purged and reported.
    pub fn get<T: for<'de> Deserialize<'de>>(
        &mut self,
        service_id: &str,
        now: DateTime<Utc>,
    ) -> Result<T, VaultError> {
        let entry = self
            .entries
            .get(service_id)
            .ok_or_else(|| VaultError::UnknownService(service_id.into()))?;
        let fail = || VaultError::DecryptFailure(service_id.into());
        let nonce: [u8; NONCE_LEN] = URL_SAFE_NO_PAD
            .decode(&entry.nonce)
            .ok()
            .and_then(|n| n.try_into().ok())
            .ok_or_else(fail)?;
        let mut buf = URL_SAFE_NO_PAD.decode(&entry.ciphertext).map_err(|_| fail())?;
        let plain = self
            .key_for(service_id)
            .open_in_place(
                Nonce::assume_unique_for_key(nonce),
                Aad::from(service_id.as_bytes()),
                &mut buf,
            )
            .map_err(|_| fail())?;
        let sealed: Sealed<T> = serde_json::from_slice(plain).map_err(|_| fail())?;
        if sealed.expires_at.is_some_and(|t| t <= now) {
            self.remove(service_id)?;
            return Err(VaultError::ExpiredEntry(service_id.into()));
        }
        Ok(sealed.value)
    }

    pub fn remove(&mut self, service_id: &str) -> Result<bool, VaultError> {
        let removed = self.entries.remove(service_id).is_some();
        if removed {
            self.persist()?;
        }
        Ok(removed)
    }

    pub fn store_tokens(
        &mut self,
        tokens: &ProviderTokenSet,
        now: DateTime<Utc>,
    ) -> Result<VaultEntry, VaultError> {
        if tokens.access_token.is_empty() || tokens.expires_at <= now {
            return Err(VaultError::InvalidTokens(tokens.provider_id.clone()));
        }
        // a refresh token outlives its access token
        let entry_expiry = tokens.refresh_token.is_none().then_some(tokens.expires_at);
        self.put(&tokens.provider_id, tokens, entry_expiry)
    }

    pub fn load_tokens(
        &mut self,
        service_id: &str,
        now: DateTime<Utc>,
    ) -> Result<ProviderTokenSet, VaultError> {
        self.get(service_id, now)
    }

    fn persist(&self) -> Result<(), VaultError> {
        let Some(file) = &self.file else {
            return Ok(());
        };
        if let Some(dir) = file.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = file.with_extension("json.tmp");
        let bytes = serde_json::to_vec_pretty(&self.entries)
            .map_err(|e| VaultError::Malformed(e.to_string()))?;
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(tmp, file)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeDelta;

    fn now() -> DateTime<Utc> {
        "2025-06-01T12:00:00Z".parse().unwrap()
    }

    fn tokens(provider: &str) -> ProviderTokenSet {
        ProviderTokenSet {
            provider_id: provider.into(),
            access_token: format!("at-{provider}"),
            refresh_token: Some("rt".into()),
            id_token: None,
            expires_at: now() + TimeDelta::hours(1),
        }
    }

    #[test]
    fn roundtrip_and_expiry() {
        let mut v = Vault::in_memory(&MemoryKeyStore::random()).unwrap();
        v.store_tokens(&tokens("gmail"), now()).unwrap();
        assert_eq!(v.load_tokens("gmail", now()).unwrap(), tokens("gmail"));
        let later = now() + TimeDelta::hours(2);
        assert_eq!(v.load_tokens("gmail", later).unwrap(), tokens("gmail"));

        let mut bare = tokens("gmail");
        bare.refresh_token = None;
        v.store_tokens(&bare, now()).unwrap();
        assert!(matches!(v.load_tokens("gmail", later), Err(VaultError::ExpiredEntry(_))));
        assert!(!v.contains("gmail"));
        assert!(matches!(v.load_tokens("gmail", now()), Err(VaultError::UnknownService(_))));
    }

    #[test]
    fn rejects_unstorable_tokens() {
        let mut v = Vault::in_memory(&MemoryKeyStore::random()).unwrap();
        let mut t = tokens("x");
        t.expires_at = now();
        assert!(matches!(v.store_tokens(&t, now()), Err(VaultError::InvalidTokens(_))));
    }

    #[test]
    fn entries_are_bound_to_their_service() {
        let mut v = Vault::in_memory(&MemoryKeyStore::random()).unwrap();
        v.store_tokens(&tokens("a"), now()).unwrap();
        v.store_tokens(&tokens("b"), now()).unwrap();
        assert_ne!(v.entries["a"].key_ref, v.entries["b"].key_ref);
        let mut moved = v.entries["a"].clone();
        moved.service_id = "b".into();
        v.entries.insert("b".into(), moved);
        assert!(matches!(v.load_tokens("b", now()), Err(VaultError::DecryptFailure(_))));
    }

    #[test]
    fn tamper_on_disk_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let keys = FileKeyStore::new(dir.path().join("master.key"));
        {
            let mut v = Vault::open(dir.path(), &keys).unwrap();
            v.store_tokens(&tokens("gmail"), now()).unwrap();
        }
        let mut v = Vault::open(dir.path(), &keys).unwrap();
        assert_eq!(v.load_tokens("gmail", now()).unwrap(), tokens("gmail"));

        let path = dir.path().join(VAULT_FILE);
        let mut entries: BTreeMap<String, VaultEntry> =
            serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        let e = entries.get_mut("gmail").unwrap();
        let mut ct = URL_SAFE_NO_PAD.decode(&e.ciphertext).unwrap();
        ct[3] ^= 0x01;
        e.ciphertext = URL_SAFE_NO_PAD.encode(ct);
        fs::write(&path, serde_json::to_vec(&entries).unwrap()).unwrap();

        let mut v = Vault::open(dir.path(), &keys).unwrap();
        assert!(matches!(v.load_tokens("gmail", now()), Err(VaultError::DecryptFailure(_))));
    }

    #[test]
    fn wrong_master_key_fails() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = Vault::open(dir.path(), &MemoryKeyStore::new([1; 32])).unwrap();
        v.store_tokens(&tokens("gmail"), now()).unwrap();
        let mut other = Vault::open(dir.path(), &MemoryKeyStore::new([2; 32])).unwrap();
        assert!(matches!(other.load_tokens("gmail", now()), Err(VaultError::DecryptFailure(_))));
    }
}
