//! The widget manifest format.
//!
//! A manifest is a flat `key = value` document, one entry per line. Blank
//! lines and lines starting with `#` are ignored. Recognised keys:
//!
//! ```text
//! title       = Call Wave
//! kind        = proxied_page          # feed | proxied_page | telecom_enabler
//! source      = https://callwave.example/inbox
//! refresh     = 60                    # seconds, positive
//! provider    = callwave.example      # optional, defaults to "local"
//! third_party = true                  # optional, defaults to false
//! service_key = callwave              # required iff third_party
//! permissions = network, identity     # subset of network, telecom, identity
//! handlers.ON_UNLOAD = saveState
//! ON_LOAD = boot                      # bare lifecycle keys are accepted too
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Enabler, WidgetKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("unknown lifecycle event {0:?}")]
    UnknownLifecycleEvent(String),
    #[error("unknown permission {0:?}")]
    UnknownPermission(String),
    #[error("third-party widget requires a service_key")]
    MissingServiceKey,
}

fn malformed(msg: impl Into<String>) -> ManifestError {
    ManifestError::Malformed(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LifecycleEvent {
    #[serde(rename = "ON_LOAD")]
    OnLoad,
    #[serde(rename = "ON_UNLOAD")]
    OnUnload,
    #[serde(rename = "ON_REFRESH")]
    OnRefresh,
}

impl LifecycleEvent {
    pub const ALL: [LifecycleEvent; 3] = [
        LifecycleEvent::OnLoad,
        LifecycleEvent::OnUnload,
        LifecycleEvent::OnRefresh,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleEvent::OnLoad => "ON_LOAD",
            LifecycleEvent::OnUnload => "ON_UNLOAD",
            LifecycleEvent::OnRefresh => "ON_REFRESH",
        }
    }
}

impl FromStr for LifecycleEvent {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LifecycleEvent::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| ManifestError::UnknownLifecycleEvent(s.to_owned()))
    }
}

impl fmt::Display for LifecycleEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Permission {
    Network,
    Telecom,
    Identity,
}

impl FromStr for Permission {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "network" => Ok(Permission::Network),
            "telecom" => Ok(Permission::Telecom),
            "identity" => Ok(Permission::Identity),
            other => Err(ManifestError::UnknownPermission(other.to_owned())),
        }
    }
}

/// A fully validated manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidgetManifest {
    pub title: String,
    pub provider: String,
    pub kind: WidgetKind,
    pub source: String,
    pub refresh_s: u32,
    pub third_party: bool,
    pub service_key: Option<String>,
    pub handlers: BTreeMap<LifecycleEvent, String>,
    pub declared_permissions: BTreeSet<Permission>,
}

pub const DEFAULT_PROVIDER: &str = "local";

/// Parses and validates a manifest document.
pub fn validate_manifest(doc: &str) -> Result<WidgetManifest, ManifestError> {
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut handlers = BTreeMap::new();

    for (lineno, raw) in doc.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| malformed(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim();
        let value = value.trim();

        let event_key = key.strip_prefix("handlers.").or_else(|| {
            // The bare `ON_UNLOAD = handler` form.
            key.starts_with("ON_").then_some(key)
        });
        if let Some(event) = event_key {
            let event: LifecycleEvent = event.parse()?;
            validate_handler_id(value)?;
            if handlers.insert(event, value.to_owned()).is_some() {
                return Err(malformed(format!("handler for {event} given twice")));
            }
            continue;
        }

        match key {
            "title" | "kind" | "source" | "refresh" | "provider" | "third_party"
            | "service_key" | "permissions" => {}
            other => return Err(malformed(format!("unknown key {other:?}"))),
        }
        if fields.insert(key.to_owned(), value.to_owned()).is_some() {
            return Err(malformed(format!("key {key:?} given twice")));
        }
    }

    let required = |k: &str| {
        fields
            .get(k)
            .filter(|v| !v.is_empty())
            .cloned()
            .ok_or_else(|| malformed(format!("missing {k}")))
    };

    let title = required("title")?;
    let kind: WidgetKind = required("kind")?
        .parse()
        .map_err(|_| malformed("kind must be feed, proxied_page or telecom_enabler"))?;
    let source = required("source")?;
    let refresh_s: u32 = required("refresh")?
        .parse()
        .ok()
        .filter(|r| *r > 0)
        .ok_or_else(|| malformed("refresh must be a positive integer"))?;
    let provider = match fields.get("provider") {
        None => DEFAULT_PROVIDER.to_owned(),
        Some(p) if !p.is_empty() => p.clone(),
        Some(_) => return Err(malformed("provider must not be empty")),
    };
    let third_party = match fields.get("third_party").map(String::as_str) {
        None | Some("false") => false,
        Some("true") => true,
        Some(other) => return Err(malformed(format!("third_party must be true or false, got {other:?}"))),
    };
    let service_key = match fields.get("service_key") {
        None => None,
        Some(k) if is_service_key(k) => Some(k.clone()),
        Some(k) => return Err(malformed(format!("invalid service_key {k:?}"))),
    };
    match (third_party, &service_key) {
        (true, None) => return Err(ManifestError::MissingServiceKey),
        (false, Some(_)) => return Err(malformed("service_key given for a first-party widget")),
        _ => {}
    }

    let mut declared_permissions = BTreeSet::new();
    if let Some(list) = fields.get("permissions") {
        for p in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            declared_permissions.insert(p.parse::<Permission>()?);
        }
    }

    validate_source(kind, &source)?;

    Ok(WidgetManifest {
        title,
        provider,
        kind,
        source,
        refresh_s,
        third_party,
        service_key,
        handlers,
        declared_permissions,
    })
}

pub(crate) fn validate_source(kind: WidgetKind, source: &str) -> Result<(), ManifestError> {
    match kind {
        WidgetKind::Feed | WidgetKind::ProxiedPage => {
            if !is_http_url(source) {
                return Err(malformed(format!(
                    "source must be an absolute http(s) URL, got {source:?}"
                )));
            }
        }
        WidgetKind::TelecomEnabler => {
            source
                .parse::<Enabler>()
                .map_err(|_| malformed(format!("unknown enabler {source:?}")))?;
        }
    }
    Ok(())
}

/// Absolute http(s) URL written out with `//` and a host. The url crate
/// alone would also accept forms like `https:/host` by normalizing them.
pub(crate) fn is_http_url(s: &str) -> bool {
    let lower = s.get(..8).unwrap_or(s).to_ascii_lowercase();
    if !(lower.starts_with("http://") || lower.starts_with("https://")) {
        return false;
    }
    match url::Url::parse(s) {
        Ok(u) => matches!(u.scheme(), "http" | "https") && u.has_host(),
        Err(_) => false,
    }
}

pub(crate) fn is_service_key(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'.')
}

pub(crate) fn validate_handler_id(id: &str) -> Result<(), ManifestError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'.' || b == b'$');
    if ok {
        Ok(())
    } else {
        Err(malformed(format!("invalid handler identifier {id:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FEED: &str = "title = World News\nkind = feed\nsource = https://news.example/rss\nrefresh = 300\n";

    #[test]
    fn minimal_feed_manifest() {
        let m = validate_manifest(FEED).unwrap();
        assert_eq!(m.kind, WidgetKind::Feed);
        assert_eq!(m.refresh_s, 300);
        assert_eq!(m.provider, DEFAULT_PROVIDER);
        assert!(!m.third_party);
        assert!(m.handlers.is_empty());
    }

    #[test]
    fn bare_on_unload_binds_handler() {
        let m = validate_manifest(&format!("{FEED}ON_UNLOAD = saveState\n")).unwrap();
        assert_eq!(
            m.handlers.get(&LifecycleEvent::OnUnload).map(String::as_str),
            Some("saveState")
        );
        let m = validate_manifest(&format!("{FEED}handlers.ON_REFRESH = tick\n")).unwrap();
        assert_eq!(m.handlers.len(), 1);
    }

    #[test]
    fn feed_source_must_be_url() {
        let doc = FEED.replace("https://news.example/rss", "not a url");
        assert!(matches!(validate_manifest(&doc), Err(ManifestError::Malformed(_))));
        let doc = FEED.replace("https://news.example/rss", "ftp://news.example/rss");
        assert!(matches!(validate_manifest(&doc), Err(ManifestError::Malformed(_))));
    }

    #[test]
    fn lifecycle_and_permission_errors() {
        assert_eq!(
            validate_manifest(&format!("{FEED}ON_EXPLODE = boom\n")),
            Err(ManifestError::UnknownLifecycleEvent("ON_EXPLODE".into()))
        );
        assert_eq!(
            validate_manifest(&format!("{FEED}permissions = network, root\n")),
            Err(ManifestError::UnknownPermission("root".into()))
        );
        let m = validate_manifest(&format!("{FEED}permissions = network,identity\n")).unwrap();
        assert_eq!(
            m.declared_permissions,
            [Permission::Network, Permission::Identity].into_iter().collect()
        );
    }

    #[test]
    fn service_key_iff_third_party() {
        assert_eq!(
            validate_manifest(&format!("{FEED}third_party = true\n")),
            Err(ManifestError::MissingServiceKey)
        );
        assert!(validate_manifest(&format!("{FEED}service_key = cw\n")).is_err());
        let m = validate_manifest(&format!("{FEED}third_party = true\nservice_key = cw\n")).unwrap();
        assert_eq!(m.service_key.as_deref(), Some("cw"));
    }

    #[test]
    fn telecom_source_must_be_known_enabler() {
        let ok = "title = Dial\nkind = telecom_enabler\nsource = speed_dial\nrefresh = 10\n";
        assert!(validate_manifest(ok).is_ok());
        let bad = ok.replace("speed_dial", "fax");
        assert!(matches!(validate_manifest(&bad), Err(ManifestError::Malformed(_))));
    }

    #[test]
    fn structural_errors() {
        for doc in [
            "",
            "title World\n",
            &format!("{FEED}colour = red\n"),
            &format!("{FEED}title = again\n"),
            &FEED.replace("300", "0"),
            &FEED.replace("300", "-5"),
            &format!("{FEED}ON_LOAD = has space\n"),
        ] {
            assert!(validate_manifest(doc).is_err(), "accepted {doc:?}");
        }
    }
}
