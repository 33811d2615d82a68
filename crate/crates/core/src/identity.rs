//! Accounts, single sign-on sessions and the per-user vault of third-party
//! service identities.
//!
//! A session token is a 256-bit random bearer string. Only its SHA-256
//! digest is persisted, so a copy of the store cannot be replayed as a
//! login. Passwords are kept as salted PBKDF2 digests. Third-party secrets
//! must be replayed to upstreams, so they are sealed with a server key
//! (ChaCha20-Poly1305) rather than hashed.

use std::sync::Arc;

use base64::engine::general_purpose::{STANDARD, URL_SAFE_NO_PAD};
use base64::Engine;
use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use chrono::{DateTime, Duration, Utc};
use dashmap::DashMap;
use parking_lot::Mutex;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Clock;
use crate::ids::UserId;
use crate::layout::{DashboardLayout, LayoutError};
use crate::store::{keys, Store, StoreError, StoreExt};

pub const MIN_PASSWORD_CHARS: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum IdentityError {
    #[error("username is already taken")]
    DuplicateUsername,
    #[error("password must be at least {MIN_PASSWORD_CHARS} characters")]
    WeakPassword,
    #[error("username must be 1-64 characters of [A-Za-z0-9._-]")]
    InvalidUsername,
    #[error("bad credentials")]
    BadCredentials,
    #[error("invalid session token")]
    InvalidToken,
    #[error("session expired")]
    ExpiredToken,
    #[error("unknown third-party service {0:?}")]
    UnknownService(String),
    #[error("identity must not be empty")]
    InvalidIdentity,
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("sealed secret could not be opened")]
    Unseal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub user_id: UserId,
    pub username: String,
    pub secret_digest: String,
    pub display_name: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub admin: bool,
}

/// A freshly issued session. The `token` string is only ever handed to the
/// client; the store keeps its digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionToken {
    pub token: String,
    pub user_id: UserId,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub revoked: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionRecord {
    user_id: UserId,
    issued_at: DateTime<Utc>,
    expires_at: DateTime<Utc>,
    revoked: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredCredential {
    user_id: UserId,
    service_key: String,
    identity: String,
    sealed_secret: String,
    attached_at: DateTime<Utc>,
}

/// Listing view of an attached identity. Never carries the secret.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceCredential {
    pub user_id: UserId,
    pub service_key: String,
    pub identity: String,
    pub attached_at: DateTime<Utc>,
}

/// Hooks fired around a session's lifetime. The layout service restores the
/// dashboard on connect and flushes it on disconnect.
pub trait SessionHooks: Send + Sync {
    fn on_connect(&self, user: &UserId) -> Result<(), LayoutError>;
    fn on_disconnect(&self, user: &UserId, pending: Option<DashboardLayout>) -> Result<(), LayoutError>;
}

/// Tells identity which service keys name registered third-party widgets.
pub trait ServiceDirectory: Send + Sync {
    fn is_third_party_service(&self, service_key: &str) -> bool;
}

impl ServiceDirectory for crate::registry::WidgetRegistry {
    fn is_third_party_service(&self, service_key: &str) -> bool {
        crate::registry::WidgetRegistry::is_third_party_service(self, service_key)
    }
}

#[derive(Debug, Clone)]
pub struct IdentityConfig {
    pub session_ttl: Duration,
    pub password_rounds: u32,
    pub admin_users: Vec<String>,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        IdentityConfig {
            session_ttl: Duration::hours(24),
            password_rounds: 100_000,
            admin_users: Vec::new(),
        }
    }
}

pub struct SealingKey([u8; 32]);

impl SealingKey {
    pub fn generate() -> Self {
        let mut k = [0u8; 32];
        OsRng.fill_bytes(&mut k);
        SealingKey(k)
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        SealingKey(bytes)
    }

    /// Loads the key from the store, creating it on first use.
    pub fn load_or_create(store: &dyn Store) -> Result<Self, StoreError> {
        if let Some(bytes) = store.get(keys::SEALING_KEY)? {
            if let Ok(arr) = <[u8; 32]>::try_from(bytes.as_slice()) {
                return Ok(SealingKey(arr));
            }
        }
        let key = SealingKey::generate();
        store.put(keys::SEALING_KEY, &key.0)?;
        Ok(key)
    }

    fn seal(&self, plaintext: &str) -> String {
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.0));
        let mut nonce = [0u8; 12];
        OsRng.fill_bytes(&mut nonce);
        let ct = cipher
            .encrypt(Nonce::from_slice(&nonce), plaintext.as_bytes())
            .expect("in-memory encryption does not fail");
        let mut out = nonce.to_vec();
        out.extend_from_slice(&ct);
        STANDARD.encode(out)
    }

    fn open(&self, sealed: &str) -> Result<String, IdentityError> {
        let raw = STANDARD.decode(sealed).map_err(|_| IdentityError::Unseal)?;
        if raw.len() < 12 {
            return Err(IdentityError::Unseal);
        }
        let (nonce, ct) = raw.split_at(12);
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.0));
        let pt = cipher
            .decrypt(Nonce::from_slice(nonce), ct)
            .map_err(|_| IdentityError::Unseal)?;
        String::from_utf8(pt).map_err(|_| IdentityError::Unseal)
    }
}

pub fn hash_password(password: &str, rounds: u32) -> String {
    let mut salt = [0u8; 16];
    OsRng.fill_bytes(&mut salt);
    let mut out = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), &salt, rounds, &mut out);
    format!(
        "pbkdf2-sha256${rounds}${}${}",
        STANDARD.encode(salt),
        STANDARD.encode(out)
    )
}

pub fn verify_password(password: &str, digest: &str) -> bool {
    let mut parts = digest.split('$');
    let (Some("pbkdf2-sha256"), Some(rounds), Some(salt), Some(hash), None) = (
        parts.next(),
        parts.next(),
        parts.next(),
        parts.next(),
        parts.next(),
    ) else {
        return false;
    };
    let (Ok(rounds), Ok(salt), Ok(expected)) = (
        rounds.parse::<u32>(),
        STANDARD.decode(salt),
        STANDARD.decode(hash),
    ) else {
        return false;
    };
    let mut out = vec![0u8; expected.len()];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), &salt, rounds, &mut out);
    // Constant-time comparison.
    out.len() == expected.len() && out.iter().zip(&expected).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
}

fn token_digest(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn new_token() -> String {
    let mut bytes = [0u8; 32];
    OsRng.fill_bytes(&mut bytes);
    URL_SAFE_NO_PAD.encode(bytes)
}

fn valid_username(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 64
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'_' || b == b'-')
}

pub struct IdentityService {
    store: Arc<dyn Store>,
    clock: Arc<dyn Clock>,
    config: IdentityConfig,
    sealing: SealingKey,
    hooks: Arc<dyn SessionHooks>,
    services: Arc<dyn ServiceDirectory>,
    registration: Mutex<()>,
    user_locks: DashMap<UserId, Arc<Mutex<()>>>,
    // Digest of a dummy password so failed lookups cost the same as a
    // password check.
    dummy_digest: String,
}

impl IdentityService {
    pub fn new(
        store: Arc<dyn Store>,
        clock: Arc<dyn Clock>,
        config: IdentityConfig,
        sealing: SealingKey,
        hooks: Arc<dyn SessionHooks>,
        services: Arc<dyn ServiceDirectory>,
    ) -> Self {
        let dummy_digest = hash_password("not-a-real-password", config.password_rounds);
        IdentityService {
            store,
            clock,
            config,
            sealing,
            hooks,
            services,
            registration: Mutex::new(()),
            user_locks: DashMap::new(),
            dummy_digest,
        }
    }

    fn user_lock(&self, user: &UserId) -> Arc<Mutex<()>> {
        self.user_locks.entry(user.clone()).or_default().clone()
    }

    pub fn register_user(
        &self,
        username: &str,
        password: &str,
        display_name: &str,
    ) -> Result<UserAccount, IdentityError> {
        if !valid_username(username) {
            return Err(IdentityError::InvalidUsername);
        }
        if password.chars().count() < MIN_PASSWORD_CHARS {
            return Err(IdentityError::WeakPassword);
        }
        let digest = hash_password(password, self.config.password_rounds);
        let _guard = self.registration.lock();
        let index = keys::username_index(username);
        if self.store.contains(&index)? {
            return Err(IdentityError::DuplicateUsername);
        }
        let account = UserAccount {
            user_id: UserId::generate(),
            username: username.to_owned(),
            secret_digest: digest,
            display_name: display_name.to_owned(),
            created_at: self.clock.now(),
            admin: self.config.admin_users.iter().any(|a| a == username),
        };
        self.store.put_json(&keys::user(&account.user_id), &account)?;
        self.store.put_json(&index, &account.user_id)?;
        Ok(account)
    }

    pub fn account(&self, user: &UserId) -> Result<Option<UserAccount>, IdentityError> {
        Ok(self.store.get_json(&keys::user(user))?)
    }

    pub fn find_by_username(&self, username: &str) -> Result<Option<UserAccount>, IdentityError> {
        if !valid_username(username) {
            return Ok(None);
        }
        match self.store.get_json::<UserId>(&keys::username_index(username))? {
            None => Ok(None),
            Some(id) => self.account(&id),
        }
    }

    /// Checks the password and issues a session that every first-party
    /// service accepts. Restores the user's layout before returning.
    pub fn authenticate(&self, username: &str, password: &str) -> Result<SessionToken, IdentityError> {
        let account = self.find_by_username(username)?;
        let ok = match &account {
            Some(acc) => verify_password(password, &acc.secret_digest),
            None => {
                verify_password(password, &self.dummy_digest);
                false
            }
        };
        let account = match (ok, account) {
            (true, Some(acc)) => acc,
            _ => return Err(IdentityError::BadCredentials),
        };

        let issued_at = self.clock.now();
        let session = SessionToken {
            token: new_token(),
            user_id: account.user_id.clone(),
            issued_at,
            expires_at: issued_at + self.config.session_ttl,
            revoked: false,
        };
        self.store.put_json(
            &keys::session(&token_digest(&session.token)),
            &SessionRecord {
                user_id: session.user_id.clone(),
                issued_at: session.issued_at,
                expires_at: session.expires_at,
                revoked: false,
            },
        )?;
        self.hooks.on_connect(&account.user_id)?;
        Ok(session)
    }

    fn live_session(&self, token: &str) -> Result<(String, SessionRecord), IdentityError> {
        if token.is_empty() || token.len() > 256 {
            return Err(IdentityError::InvalidToken);
        }
        let key = keys::session(&token_digest(token));
        let record: SessionRecord = self
            .store
            .get_json(&key)?
            .ok_or(IdentityError::InvalidToken)?;
        if record.revoked {
            return Err(IdentityError::InvalidToken);
        }
        if self.clock.now() >= record.expires_at {
            return Err(IdentityError::ExpiredToken);
        }
        Ok((key, record))
    }

    pub fn resolve_session(&self, token: &str) -> Result<UserAccount, IdentityError> {
        let (_, record) = self.live_session(token)?;
        self.account(&record.user_id)?
            .ok_or(IdentityError::InvalidToken)
    }

    /// Flushes the layout (optionally committing a client-held copy), then
    /// revokes the token. A failed flush leaves the session live.
    pub fn logout(&self, token: &str, pending: Option<DashboardLayout>) -> Result<(), IdentityError> {
        let (key, mut record) = self.live_session(token)?;
        self.hooks.on_disconnect(&record.user_id, pending)?;
        record.revoked = true;
        self.store.put_json(&key, &record)?;
        Ok(())
    }

    pub fn update_display_name(&self, user: &UserId, display_name: &str) -> Result<UserAccount, IdentityError> {
        let lock = self.user_lock(user);
        let _g = lock.lock();
        let mut acc = self.account(user)?.ok_or(IdentityError::InvalidToken)?;
        acc.display_name = display_name.to_owned();
        self.store.put_json(&keys::user(user), &acc)?;
        Ok(acc)
    }

    pub fn attach_service_identity(
        &self,
        token: &str,
        service_key: &str,
        identity: &str,
        secret: &str,
    ) -> Result<ServiceCredential, IdentityError> {
        let user = self.resolve_session(token)?;
        if !self.services.is_third_party_service(service_key) {
            return Err(IdentityError::UnknownService(service_key.to_owned()));
        }
        if identity.is_empty() {
            return Err(IdentityError::InvalidIdentity);
        }
        let stored = StoredCredential {
            user_id: user.user_id.clone(),
            service_key: service_key.to_owned(),
            identity: identity.to_owned(),
            sealed_secret: self.sealing.seal(secret),
            attached_at: self.clock.now(),
        };
        let lock = self.user_lock(&user.user_id);
        let _g = lock.lock();
        self.store
            .put_json(&keys::credential(&user.user_id, service_key), &stored)?;
        Ok(ServiceCredential {
            user_id: stored.user_id,
            service_key: stored.service_key,
            identity: stored.identity,
            attached_at: stored.attached_at,
        })
    }

    pub fn list_service_identities(&self, user: &UserId) -> Result<Vec<ServiceCredential>, IdentityError> {
        let mut out = Vec::new();
        for key in self.store.keys(&keys::credential_prefix(user))? {
            if let Some(c) = self.store.get_json::<StoredCredential>(&key)? {
                out.push(ServiceCredential {
                    user_id: c.user_id,
                    service_key: c.service_key,
                    identity: c.identity,
                    attached_at: c.attached_at,
                });
            }
        }
        Ok(out)
    }

    pub fn has_service_identity(&self, user: &UserId, service_key: &str) -> Result<bool, IdentityError> {
        Ok(self.store.contains(&keys::credential(user, service_key))?)
    }

    /// The unsealed (identity, secret) pair for injection into upstream
    /// requests.
    pub fn service_secret(
        &self,
        user: &UserId,
        service_key: &str,
    ) -> Result<Option<(String, String)>, IdentityError> {
        match self
            .store
            .get_json::<StoredCredential>(&keys::credential(user, service_key))?
        {
            None => Ok(None),
            Some(c) => Ok(Some((c.identity, self.sealing.open(&c.sealed_secret)?))),
        }
    }
}
