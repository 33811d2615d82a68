//! Syndicated feed ingestion: parsing, merging and rendering the blocks that
//! feed widgets display.

mod parse;

pub use parse::{parse_feed, ParsedFeed};

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::ids::InstanceId;
use crate::layout::WidgetConfig;
use crate::proxy::{canonical_proxy_url, EgressPolicy, RewriteRule, MODULE_NAV_ATTR};

#[derive(Debug, thiserror::Error)]
pub enum FeedError {
    #[error("malformed feed: {0}")]
    MalformedFeed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedFormat {
    Rss,
    Atom,
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedSource {
    pub url: String,
    #[serde(default)]
    pub declared_kind: FeedFormat,
    pub refresh_s: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedItem {
    pub id: String,
    pub title: String,
    pub link: Option<String>,
    pub published_at: DateTime<Utc>,
    /// Set when `published_at` is the fetch time rather than a feed date.
    pub synthetic_time: bool,
    pub summary: Option<String>,
    pub enclosure_url: Option<String>,
    /// URL of the feed the item came from.
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergePolicy {
    pub max_items: usize,
}

impl Default for MergePolicy {
    fn default() -> Self {
        MergePolicy { max_items: 50 }
    }
}

/// Merge order: newest first, ties broken by (source, id) ascending.
pub fn item_order(a: &FeedItem, b: &FeedItem) -> Ordering {
    b.published_at
        .cmp(&a.published_at)
        .then_with(|| a.source.cmp(&b.source))
        .then_with(|| a.id.cmp(&b.id))
}

/// Concatenates, keeps the newest copy of each id, sorts and truncates.
pub fn merge_feeds(lists: &[Vec<FeedItem>], policy: MergePolicy) -> Vec<FeedItem> {
    let mut best: HashMap<&str, &FeedItem> = HashMap::new();
    for item in lists.iter().flatten() {
        best.entry(item.id.as_str())
            .and_modify(|cur| {
                if item_order(item, cur) == Ordering::Less {
                    *cur = item;
                }
            })
            .or_insert(item);
    }
    let mut out: Vec<FeedItem> = best.into_values().cloned().collect();
    out.sort_by(item_order);
    out.truncate(policy.max_items);
    out
}

/// Marker present in the fragment of an empty feed block.
pub const EMPTY_MARKER: &str = "data-empty-state=\"true\"";

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Renders a feed block. Links and images go through the proxy. With
/// `view = pictures` in the widget config only enclosures are shown.
pub fn render_module_block(
    items: &[FeedItem],
    config: &WidgetConfig,
    rule: &RewriteRule,
    module: &InstanceId,
) -> String {
    let module_attr = escape_html(module.as_str());
    if items.is_empty() {
        return format!(
            "<div class=\"feed-block\" data-module=\"{module_attr}\"><p class=\"feed-empty\" {EMPTY_MARKER}>No items</p></div>"
        );
    }
    let pictures_only = config.get("view").map(String::as_str) == Some("pictures");
    let mut out = format!("<div class=\"feed-block\" data-module=\"{module_attr}\"><ul>");
    for item in items {
        if pictures_only && item.enclosure_url.is_none() {
            continue;
        }
        out.push_str("<li class=\"feed-item\">");
        let title = if item.title.is_empty() {
            "(untitled)".to_owned()
        } else {
            escape_html(&item.title)
        };
        if !pictures_only {
            match item
                .link
                .as_deref()
                .and_then(|l| canonical_proxy_url(rule, l, module).ok())
            {
                Some(href) => {
                    let _ = write!(
                        out,
                        "<a href=\"{}\" {MODULE_NAV_ATTR}=\"{module_attr}\">{title}</a>",
                        escape_html(&href)
                    );
                }
                None => {
                    let _ = write!(out, "<span class=\"feed-title\">{title}</span>");
                }
            }
            if item.synthetic_time {
                out.push_str(" <time data-synthetic=\"true\"></time>");
            } else {
                let ts = item.published_at.to_rfc3339_opts(SecondsFormat::Secs, true);
                let _ = write!(out, " <time datetime=\"{ts}\">{ts}</time>");
            }
        }
        if let Some(src) = item
            .enclosure_url
            .as_deref()
            .and_then(|u| canonical_proxy_url(rule, u, module).ok())
        {
            let _ = write!(
                out,
                "<img src=\"{}\" alt=\"{title}\"/>",
                escape_html(&src)
            );
        }
        out.push_str("</li>");
    }
    out.push_str("</ul></div>");
    out
}

/// Result of fetching one source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeedFetch {
    pub items: Vec<FeedItem>,
    /// True when `items` is the last good result (or empty) because the
    /// latest attempt failed.
    pub stale: bool,
    /// When `items` was fetched.
    pub fetched_at: Option<DateTime<Utc>>,
    pub error: Option<String>,
}

#[derive(Default)]
struct SourceSlot {
    serial: tokio::sync::Mutex<()>,
}

/// Fetches feeds over HTTP, keeping the last good result per source.
pub struct FeedFetcher {
    client: reqwest::Client,
    clock: Arc<dyn Clock>,
    policy: Option<Arc<EgressPolicy>>,
    slots: DashMap<String, Arc<SourceSlot>>,
    last_good: DashMap<String, FeedFetch>,
}

impl FeedFetcher {
    pub fn new(clock: Arc<dyn Clock>, timeout: Duration, policy: Option<Arc<EgressPolicy>>) -> Self {
        FeedFetcher {
            client: reqwest::Client::builder()
                .timeout(timeout)
                .build()
                .expect("static reqwest configuration"),
            clock,
            policy,
            slots: DashMap::new(),
            last_good: DashMap::new(),
        }
    }

    /// The last fresh result for `url`, without waiting on in-flight fetches.
    pub fn cached(&self, url: &str) -> Option<FeedFetch> {
        self.last_good.get(url).map(|e| e.clone())
    }

    async fn download(&self, source: &FeedSource) -> Result<Vec<u8>, String> {
        if let Some(policy) = &self.policy {
            policy.check(&source.url).map_err(|e| e.to_string())?;
        } else if !crate::registry::is_http_url(&source.url) {
            return Err(format!("unsupported feed URL {:?}", source.url));
        }
        let resp = self
            .client
            .get(&source.url)
            .send()
            .await
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("upstream answered {}", resp.status()));
        }
        resp.bytes().await.map(|b| b.to_vec()).map_err(|e| e.to_string())
    }

    fn stale_result(&self, url: &str, error: String) -> FeedFetch {
        match self.cached(url) {
            Some(prev) => FeedFetch {
                stale: true,
                error: Some(error),
                ..prev
            },
            None => FeedFetch {
                items: Vec::new(),
                stale: true,
                fetched_at: None,
                error: Some(error),
            },
        }
    }

    /// Fetches and parses `source`. Failures fall back to the last good
    /// result, flagged stale.
    pub async fn fetch_feed(&self, source: &FeedSource) -> FeedFetch {
        let slot = self.slots.entry(source.url.clone()).or_default().clone();
        let _serial = slot.serial.lock().await;
        self.fetch_locked(source).await
    }

    /// Like [`fetch_feed`](Self::fetch_feed) but reuses a fresh cached result
    /// younger than `source.refresh_s`.
    pub async fn fetch_with_refresh(&self, source: &FeedSource) -> FeedFetch {
        let slot = self.slots.entry(source.url.clone()).or_default().clone();
        let _serial = slot.serial.lock().await;
        if let Some(prev) = self.cached(&source.url) {
            let age = self.clock.now() - prev.fetched_at.unwrap_or_default();
            if age < chrono::Duration::seconds(i64::from(source.refresh_s)) {
                return prev;
            }
        }
        self.fetch_locked(source).await
    }

    async fn fetch_locked(&self, source: &FeedSource) -> FeedFetch {
        let now = self.clock.now();
        let bytes = match self.download(source).await {
            Ok(b) => b,
            Err(e) => return self.stale_result(&source.url, e),
        };
        match parse_feed(&bytes, source.declared_kind, &source.url, now) {
            Ok(parsed) => {
                if parsed.skipped > 0 {
                    tracing::warn!(url = %source.url, skipped = parsed.skipped, "skipped unusable feed entries");
                }
                let fresh = FeedFetch {
                    items: parsed.items,
                    stale: false,
                    fetched_at: Some(now),
                    error: None,
                };
                self.last_good.insert(source.url.clone(), fresh.clone());
                fresh
            }
            Err(e) => self.stale_result(&source.url, e.to_string()),
        }
    }
}
