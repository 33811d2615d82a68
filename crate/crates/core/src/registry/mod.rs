//! The widget catalog: descriptors, lifecycle handler bindings and the
//! append-only usage log operators read their analytics from.

mod manifest;

pub use manifest::{
    validate_manifest, LifecycleEvent, ManifestError, Permission, WidgetManifest, DEFAULT_PROVIDER,
};

pub(crate) use manifest::is_http_url;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Clock;
use crate::config::SeedFeed;
use crate::ids::{DescriptorId, UserId};
use crate::store::{keys, Store, StoreError, StoreExt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidgetKind {
    Feed,
    ProxiedPage,
    TelecomEnabler,
}

impl WidgetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WidgetKind::Feed => "feed",
            WidgetKind::ProxiedPage => "proxied_page",
            WidgetKind::TelecomEnabler => "telecom_enabler",
        }
    }
}

impl FromStr for WidgetKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "feed" => Ok(WidgetKind::Feed),
            "proxied_page" => Ok(WidgetKind::ProxiedPage),
            "telecom_enabler" => Ok(WidgetKind::TelecomEnabler),
            _ => Err(()),
        }
    }
}

impl fmt::Display for WidgetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The builtin telecom enablers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enabler {
    Profile,
    SpeedDial,
    Presence,
    Im,
    Voicemail,
}

impl Enabler {
    pub const ALL: [Enabler; 5] = [
        Enabler::Profile,
        Enabler::SpeedDial,
        Enabler::Presence,
        Enabler::Im,
        Enabler::Voicemail,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Enabler::Profile => "profile",
            Enabler::SpeedDial => "speed_dial",
            Enabler::Presence => "presence",
            Enabler::Im => "im",
            Enabler::Voicemail => "voicemail",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Enabler::Profile => "Profile",
            Enabler::SpeedDial => "Speed Dial",
            Enabler::Presence => "Presence",
            Enabler::Im => "Instant Messages",
            Enabler::Voicemail => "Voice Mail",
        }
    }

    fn default_refresh_s(self) -> u32 {
        match self {
            Enabler::Profile => 3600,
            Enabler::Presence => 30,
            _ => 15,
        }
    }

    /// The catalog id of the builtin descriptor for this enabler.
    pub fn descriptor_id(self) -> DescriptorId {
        descriptor_id_for(BUILTIN_PROVIDER, self.title(), self.as_str())
    }
}

impl FromStr for Enabler {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Enabler::ALL.into_iter().find(|e| e.as_str() == s).ok_or(())
    }
}

pub const BUILTIN_PROVIDER: &str = "builtin";

/// Descriptor ids are a digest of (provider, title, source), so the same
/// widget keeps its id across restarts and duplicates collide.
pub fn descriptor_id_for(provider: &str, title: &str, source: &str) -> DescriptorId {
    let mut h = Sha256::new();
    for part in [provider, title, source] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    let digest = h.finalize();
    DescriptorId::from(format!("w-{}", hex::encode(&digest[..8])))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidgetDescriptor {
    pub descriptor_id: DescriptorId,
    pub title: String,
    pub provider: String,
    pub kind: WidgetKind,
    pub source: String,
    pub default_refresh_s: u32,
    pub third_party: bool,
    pub service_key: Option<String>,
}

impl WidgetDescriptor {
    pub fn enabler(&self) -> Option<Enabler> {
        match self.kind {
            WidgetKind::TelecomEnabler => self.source.parse().ok(),
            _ => None,
        }
    }
}

/// What the catalog stores per widget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub descriptor: WidgetDescriptor,
    pub handlers: BTreeMap<LifecycleEvent, String>,
    pub declared_permissions: BTreeSet<Permission>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageEvent {
    Added,
    Removed,
    Viewed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub seq: u64,
    pub descriptor_id: DescriptorId,
    pub user_id: UserId,
    pub event: UsageEvent,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageCounts {
    pub added: u64,
    pub removed: u64,
    pub viewed: u64,
    pub distinct_users: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("a widget with the same provider, title and source is already registered")]
    DuplicateDescriptor(DescriptorId),
    #[error("unknown widget descriptor {0}")]
    UnknownDescriptor(DescriptorId),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub struct WidgetRegistry {
    store: Arc<dyn Store>,
    clock: Arc<dyn Clock>,
    catalog: RwLock<BTreeMap<DescriptorId, CatalogEntry>>,
    usage: Mutex<Vec<UsageRecord>>,
}

impl WidgetRegistry {
    /// Loads the catalog and usage log from the store.
    pub fn open(store: Arc<dyn Store>, clock: Arc<dyn Clock>) -> Result<Self, RegistryError> {
        let mut catalog = BTreeMap::new();
        for key in store.keys(keys::CATALOG_PREFIX)? {
            if let Some(entry) = store.get_json::<CatalogEntry>(&key)? {
                catalog.insert(entry.descriptor.descriptor_id.clone(), entry);
            }
        }
        let mut usage = Vec::new();
        for key in store.keys(keys::USAGE_PREFIX)? {
            if let Some(rec) = store.get_json::<UsageRecord>(&key)? {
                usage.push(rec);
            }
        }
        usage.sort_by_key(|r| r.seq);
        Ok(WidgetRegistry {
            store,
            clock,
            catalog: RwLock::new(catalog),
            usage: Mutex::new(usage),
        })
    }

    pub fn register_widget(&self, manifest: WidgetManifest) -> Result<WidgetDescriptor, RegistryError> {
        let id = descriptor_id_for(&manifest.provider, &manifest.title, &manifest.source);
        let mut catalog = self.catalog.write();
        if catalog.contains_key(&id) {
            return Err(RegistryError::DuplicateDescriptor(id));
        }
        let descriptor = WidgetDescriptor {
            descriptor_id: id.clone(),
            title: manifest.title,
            provider: manifest.provider,
            kind: manifest.kind,
            source: manifest.source,
            default_refresh_s: manifest.refresh_s,
            third_party: manifest.third_party,
            service_key: manifest.service_key,
        };
        let entry = CatalogEntry {
            descriptor: descriptor.clone(),
            handlers: manifest.handlers,
            declared_permissions: manifest.declared_permissions,
        };
        self.store.put_json(&keys::catalog(&id), &entry)?;
        catalog.insert(id, entry);
        Ok(descriptor)
    }

    /// Parses, validates and registers a manifest document.
    pub fn register_document(&self, doc: &str) -> Result<WidgetDescriptor, RegistryError> {
        self.register_widget(validate_manifest(doc)?)
    }

    /// Registers the five builtin enablers; already-present ones are left alone.
    pub fn seed_builtins(&self) -> Result<(), RegistryError> {
        for enabler in Enabler::ALL {
            let permissions = match enabler {
                Enabler::Profile => [Permission::Identity].into_iter().collect(),
                _ => [Permission::Telecom].into_iter().collect(),
            };
            self.seed(WidgetManifest {
                title: enabler.title().to_owned(),
                provider: BUILTIN_PROVIDER.to_owned(),
                kind: WidgetKind::TelecomEnabler,
                source: enabler.as_str().to_owned(),
                refresh_s: enabler.default_refresh_s(),
                third_party: false,
                service_key: None,
                handlers: BTreeMap::new(),
                declared_permissions: permissions,
            })?;
        }
        Ok(())
    }

    pub fn seed_feed(&self, feed: &SeedFeed) -> Result<WidgetDescriptor, RegistryError> {
        manifest::validate_source(WidgetKind::Feed, &feed.source)?;
        if feed.title.is_empty() || feed.refresh == 0 {
            return Err(ManifestError::Malformed("seed feed needs a title and positive refresh".into()).into());
        }
        self.seed(WidgetManifest {
            title: feed.title.clone(),
            provider: BUILTIN_PROVIDER.to_owned(),
            kind: WidgetKind::Feed,
            source: feed.source.clone(),
            refresh_s: feed.refresh,
            third_party: false,
            service_key: None,
            handlers: BTreeMap::new(),
            declared_permissions: [Permission::Network].into_iter().collect(),
        })
    }

    fn seed(&self, manifest: WidgetManifest) -> Result<WidgetDescriptor, RegistryError> {
        match self.register_widget(manifest) {
            Err(RegistryError::DuplicateDescriptor(id)) => Ok(self
                .descriptor(&id)
                .expect("duplicate implies present")),
            other => other,
        }
    }

    pub fn descriptor(&self, id: &DescriptorId) -> Option<WidgetDescriptor> {
        self.catalog.read().get(id).map(|e| e.descriptor.clone())
    }

    pub fn entry(&self, id: &DescriptorId) -> Option<CatalogEntry> {
        self.catalog.read().get(id).cloned()
    }

    pub fn contains(&self, id: &DescriptorId) -> bool {
        self.catalog.read().contains_key(id)
    }

    /// Catalog listing ordered by title, then id.
    pub fn list_catalog(&self, kind: Option<WidgetKind>) -> Vec<WidgetDescriptor> {
        let mut out: Vec<WidgetDescriptor> = self
            .catalog
            .read()
            .values()
            .map(|e| &e.descriptor)
            .filter(|d| kind.is_none_or(|k| d.kind == k))
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            a.title
                .cmp(&b.title)
                .then_with(|| a.descriptor_id.cmp(&b.descriptor_id))
        });
        out
    }

    pub fn bind_lifecycle_handler(
        &self,
        id: &DescriptorId,
        event: &str,
        handler_id: &str,
    ) -> Result<(), RegistryError> {
        let mut catalog = self.catalog.write();
        let entry = catalog
            .get(id)
            .ok_or_else(|| RegistryError::UnknownDescriptor(id.clone()))?;
        let event: LifecycleEvent = event.parse()?;
        manifest::validate_handler_id(handler_id)?;
        let mut updated = entry.clone();
        updated.handlers.insert(event, handler_id.to_owned());
        self.store.put_json(&keys::catalog(id), &updated)?;
        catalog.insert(id.clone(), updated);
        Ok(())
    }

    pub fn handlers(&self, id: &DescriptorId) -> BTreeMap<LifecycleEvent, String> {
        self.catalog
            .read()
            .get(id)
            .map(|e| e.handlers.clone())
            .unwrap_or_default()
    }

    /// True when some third-party widget in the catalog uses `service_key`.
    pub fn is_third_party_service(&self, service_key: &str) -> bool {
        self.catalog
            .read()
            .values()
            .any(|e| e.descriptor.third_party && e.descriptor.service_key.as_deref() == Some(service_key))
    }

    pub fn record_usage(
        &self,
        id: &DescriptorId,
        user: &UserId,
        event: UsageEvent,
    ) -> Result<(), RegistryError> {
        if !self.contains(id) {
            return Err(RegistryError::UnknownDescriptor(id.clone()));
        }
        let mut log = self.usage.lock();
        let rec = UsageRecord {
            seq: log.last().map_or(0, |r| r.seq + 1),
            descriptor_id: id.clone(),
            user_id: user.clone(),
            event,
            at: self.clock.now(),
        };
        self.store.put_json(&keys::usage(rec.seq), &rec)?;
        log.push(rec);
        Ok(())
    }

    pub fn usage_log(&self) -> Vec<UsageRecord> {
        self.usage.lock().clone()
    }

    /// Per-descriptor counts over the whole history. Every catalogued
    /// descriptor appears, with zeros if it was never used.
    pub fn usage_report(&self) -> BTreeMap<DescriptorId, UsageCounts> {
        let mut report: BTreeMap<DescriptorId, UsageCounts> = self
            .catalog
            .read()
            .keys()
            .map(|id| (id.clone(), UsageCounts::default()))
            .collect();
        let mut users: BTreeMap<&DescriptorId, BTreeSet<&UserId>> = BTreeMap::new();
        let log = self.usage.lock();
        for rec in log.iter() {
            let counts = report.entry(rec.descriptor_id.clone()).or_default();
            match rec.event {
                UsageEvent::Added => counts.added += 1,
                UsageEvent::Removed => counts.removed += 1,
                UsageEvent::Viewed => counts.viewed += 1,
            }
            users.entry(&rec.descriptor_id).or_default().insert(&rec.user_id);
        }
        for (id, set) in users {
            if let Some(c) = report.get_mut(id) {
                c.distinct_users = set.len() as u64;
            }
        }
        report
    }
}
