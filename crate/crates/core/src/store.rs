//! The shared key-to-document store.
//!
//! Keys are `/`-separated paths under a small set of namespaces (see
//! [`keys`]). Values are opaque byte strings; callers normally go through
//! [`StoreExt`] to read and write JSON documents. Writes are atomic per key.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store I/O error on {key}: {source}")]
    Io {
        key: String,
        #[source]
        source: io::Error,
    },
    #[error("corrupt document at {key}: {source}")]
    Corrupt {
        key: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid store key {0:?}")]
    InvalidKey(String),
}

pub trait Store: Send + Sync {
    fn get(&self, key: &str) -> Result<Option<Vec<u8>>, StoreError>;
    fn put(&self, key: &str, value: &[u8]) -> Result<(), StoreError>;
    /// Returns whether the key existed.
    fn delete(&self, key: &str) -> Result<bool, StoreError>;
    /// All keys starting with `prefix`, in ascending order.
    fn keys(&self, prefix: &str) -> Result<Vec<String>, StoreError>;

    fn contains(&self, key: &str) -> Result<bool, StoreError> {
        Ok(self.get(key)?.is_some())
    }
}

pub trait StoreExt: Store {
    fn get_json<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, StoreError> {
        match self.get(key)? {
            None => Ok(None),
            Some(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|source| StoreError::Corrupt {
                    key: key.to_owned(),
                    source,
                }),
        }
    }

    fn put_json<T: Serialize + ?Sized>(&self, key: &str, value: &T) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec(value).map_err(|source| StoreError::Corrupt {
            key: key.to_owned(),
            source,
        })?;
        self.put(key, &bytes)
    }
}

impl<S: Store + ?Sized> StoreExt for S {}

/// Key layout shared by all services.
pub mod keys {
    use crate::ids::{CallId, DescriptorId, UserId};

    pub fn user(id: &UserId) -> String {
        format!("user/{id}")
    }

    pub fn username_index(username: &str) -> String {
        format!("user/by-name/{username}")
    }

    pub fn credential(id: &UserId, service_key: &str) -> String {
        format!("user/{id}/cred/{service_key}")
    }

    pub fn credential_prefix(id: &UserId) -> String {
        format!("user/{id}/cred/")
    }

    pub fn session(token_digest: &str) -> String {
        format!("session/{token_digest}")
    }

    pub fn layout(id: &UserId) -> String {
        format!("layout/{id}")
    }

    pub fn catalog(id: &DescriptorId) -> String {
        format!("catalog/{id}")
    }

    pub const CATALOG_PREFIX: &str = "catalog/";

    pub fn usage(seq: u64) -> String {
        format!("usage/{seq:012}")
    }

    pub const USAGE_PREFIX: &str = "usage/";

    pub fn contacts(id: &UserId) -> String {
        format!("telecom/{id}/contacts")
    }

    pub fn presence(id: &UserId) -> String {
        format!("telecom/{id}/presence")
    }

    pub fn im_mailbox(id: &UserId) -> String {
        format!("telecom/{id}/im")
    }

    pub fn voice_mailbox(id: &UserId) -> String {
        format!("telecom/{id}/voicemail")
    }

    pub fn call(id: &CallId) -> String {
        format!("telecom/calls/{id}")
    }

    pub const CALL_PREFIX: &str = "telecom/calls/";

    pub const SEALING_KEY: &str = "meta/sealing-key";
}

fn check_key(key: &str) -> Result<(), StoreError> {
    if key.is_empty() || key.starts_with('/') || key.ends_with('/') || key.contains("//") {
        return Err(StoreError::InvalidKey(key.to_owned()));
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    docs: RwLock<BTreeMap<String, Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every persisted byte, concatenated in key order.
    pub fn dump(&self) -> Vec<u8> {
        let docs = self.docs.read();
        let mut out = Vec::new();
        for (k, v) in docs.iter() {
            out.extend_from_slice(k.as_bytes());
            out.push(b'\n');
            out.extend_from_slice(v);
            out.push(b'\n');
        }
        out
    }
}

impl Store for MemoryStore {
    fn get(&self, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        check_key(key)?;
        Ok(self.docs.read().get(key).cloned())
    }

    fn put(&self, key: &str, value: &[u8]) -> Result<(), StoreError> {
        check_key(key)?;
        self.docs.write().insert(key.to_owned(), value.to_vec());
        Ok(())
    }

    fn delete(&self, key: &str) -> Result<bool, StoreError> {
        check_key(key)?;
        Ok(self.docs.write().remove(key).is_some())
    }

    fn keys(&self, prefix: &str) -> Result<Vec<String>, StoreError> {
        Ok(self
            .docs
            .read()
            .range(prefix.to_owned()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, _)| k.clone())
            .collect())
    }
}

const DOC_SUFFIX: &str = ".doc";

/// A directory-backed store: one file per key, written via rename so that
/// a reader never sees a torn document.
#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(FileStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &str) -> Result<PathBuf, StoreError> {
        check_key(key)?;
        let mut path = self.root.clone();
        let segments: Vec<&str> = key.split('/').collect();
        for (i, seg) in segments.iter().enumerate() {
            let mut name = encode_segment(seg);
            if i + 1 == segments.len() {
                name.push_str(DOC_SUFFIX);
            }
            path.push(name);
        }
        Ok(path)
    }

    fn io_err(key: &str) -> impl FnOnce(io::Error) -> StoreError + '_ {
        move |source| StoreError::Io {
            key: key.to_owned(),
            source,
        }
    }

    fn walk(&self, dir: &Path, prefix: &str, out: &mut Vec<String>) -> io::Result<()> {
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e),
        };
        for entry in entries {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.file_type()?.is_dir() {
                let seg = decode_segment(&name);
                self.walk(&entry.path(), &format!("{prefix}{seg}/"), out)?;
            } else if let Some(stem) = name.strip_suffix(DOC_SUFFIX) {
                out.push(format!("{prefix}{}", decode_segment(stem)));
            }
        }
        Ok(())
    }
}

impl Store for FileStore {
    fn get(&self, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        let path = self.path_for(key)?;
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Self::io_err(key)(e)),
        }
    }

    fn put(&self, key: &str, value: &[u8]) -> Result<(), StoreError> {
        let path = self.path_for(key)?;
        let dir = path.parent().expect("document path has a parent");
        fs::create_dir_all(dir).map_err(Self::io_err(key))?;
        let tmp = dir.join(format!(
            ".tmp-{}",
            uuid::Uuid::new_v4().simple()
        ));
        let write = || -> io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(value)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Self::io_err(key)(e)
        })
    }

    fn delete(&self, key: &str) -> Result<bool, StoreError> {
        let path = self.path_for(key)?;
        match fs::remove_file(&path) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(Self::io_err(key)(e)),
        }
    }

    fn keys(&self, prefix: &str) -> Result<Vec<String>, StoreError> {
        // Walk from the deepest directory fully named by the prefix.
        let (dir_part, _) = prefix.rsplit_once('/').unwrap_or(("", prefix));
        let mut dir = self.root.clone();
        let mut base = String::new();
        if !dir_part.is_empty() {
            for seg in dir_part.split('/') {
                dir.push(encode_segment(seg));
                base.push_str(seg);
                base.push('/');
            }
        }
        let mut out = Vec::new();
        self.walk(&dir, &base, &mut out)
            .map_err(Self::io_err(prefix))?;
        out.retain(|k| k.starts_with(prefix));
        out.sort();
        Ok(out)
    }
}

fn encode_segment(seg: &str) -> String {
    let mut out = String::with_capacity(seg.len());
    for (i, b) in seg.bytes().enumerate() {
        let plain = b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || (b == b'.' && i > 0);
        if plain {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn decode_segment(seg: &str) -> String {
    percent_encoding::percent_decode_str(seg)
        .decode_utf8_lossy()
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exercise(store: &dyn Store) {
        assert_eq!(store.get("user/a").unwrap(), None);
        store.put("user/a", b"one").unwrap();
        store.put("user/a/cred/x", b"two").unwrap();
        store.put("user/b", b"three").unwrap();
        store.put("layout/a", b"four").unwrap();
        assert_eq!(store.get("user/a").unwrap().as_deref(), Some(&b"one"[..]));
        assert_eq!(
            store.keys("user/").unwrap(),
            vec!["user/a", "user/a/cred/x", "user/b"]
        );
        assert_eq!(store.keys("user/a/cred/").unwrap(), vec!["user/a/cred/x"]);
        assert_eq!(store.keys("lay").unwrap(), vec!["layout/a"]);
        store.put("user/a", b"five").unwrap();
        assert_eq!(store.get("user/a").unwrap().as_deref(), Some(&b"five"[..]));
        assert!(store.delete("user/b").unwrap());
        assert!(!store.delete("user/b").unwrap());
        assert!(matches!(store.put("/x", b""), Err(StoreError::InvalidKey(_))));
    }

    #[test]
    fn memory_store_contract() {
        exercise(&MemoryStore::new());
    }

    #[test]
    fn file_store_contract() {
        let dir = tempfile::tempdir().unwrap();
        exercise(&FileStore::open(dir.path()).unwrap());
    }

    #[test]
    fn file_store_escapes_odd_segments() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        store.put("user/by-name/..", b"x").unwrap();
        store.put("user/by-name/a b%", b"y").unwrap();
        assert_eq!(
            store.keys("user/by-name/").unwrap(),
            vec!["user/by-name/..", "user/by-name/a b%"]
        );
        // Nothing escaped the root.
        assert!(dir.path().join("user").is_dir());
    }

    #[test]
    fn json_helpers_round_trip() {
        let store = MemoryStore::new();
        store.put_json("catalog/x", &vec![1, 2, 3]).unwrap();
        let v: Vec<i32> = store.get_json("catalog/x").unwrap().unwrap();
        assert_eq!(v, vec![1, 2, 3]);
        store.put("catalog/y", b"not json").unwrap();
        assert!(store.get_json::<Vec<i32>>("catalog/y").is_err());
    }
}
