//! RSS 2.0 / Atom 1.0 subset parser.

use chrono::{DateTime, Utc};
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use sha2::{Digest, Sha256};

use super::{FeedError, FeedFormat, FeedItem};

/// Elements nested deeper than this are ignored.
const MAX_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFeed {
    pub format: FeedFormat,
    pub items: Vec<FeedItem>,
    /// Entries dropped because they carried nothing to identify them by.
    pub skipped: usize,
}

#[derive(Debug, Default)]
struct Node {
    name: String,
    attrs: Vec<(String, String)>,
    text: String,
    children: Vec<Node>,
}

impl Node {
    fn child(&self, name: &str) -> Option<&Node> {
        self.children.iter().find(|c| c.name == name)
    }

    fn children_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Node> + 'a {
        self.children.iter().filter(move |c| c.name == name)
    }

    fn text_of(&self, name: &str) -> Option<String> {
        self.child(name)
            .map(|c| c.text.trim().to_owned())
            .filter(|t| !t.is_empty())
    }

    fn attr(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }
}

/// Local element name. Prefixed names are kept with their prefix except for
/// an explicit `atom:` prefix, so extension elements (`media:`, `dc:`) never
/// shadow core ones.
fn element_name(e: &BytesStart<'_>) -> String {
    let raw = String::from_utf8_lossy(e.name().as_ref()).into_owned();
    match raw.strip_prefix("atom:") {
        Some(local) => local.to_owned(),
        None => raw,
    }
}

fn attributes(e: &BytesStart<'_>) -> Vec<(String, String)> {
    e.attributes()
        .with_checks(false)
        .filter_map(Result::ok)
        .map(|a| {
            let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
            let value = a
                .unescape_value()
                .map(|v| v.into_owned())
                .unwrap_or_else(|_| String::from_utf8_lossy(&a.value).into_owned());
            (key, value)
        })
        .collect()
}

/// Builds a tree leniently: a syntax error ends the document, and elements
/// still open at that point are closed as they stand.
fn build_tree(bytes: &[u8]) -> Option<Node> {
    let mut reader = Reader::from_reader(bytes);
    let config = reader.config_mut();
    config.check_end_names = false;
    config.expand_empty_elements = true;
    config.allow_unmatched_ends = true;

    let mut stack: Vec<Node> = Vec::new();
    let mut root: Option<Node> = None;
    let mut skip_depth = 0usize;
    let mut buf = Vec::new();

    loop {
        let event = match reader.read_event_into(&mut buf) {
            Ok(ev) => ev,
            Err(_) => break,
        };
        match event {
            Event::Start(e) => {
                if root.is_some() && stack.is_empty() {
                    break;
                }
                if skip_depth > 0 || stack.len() >= MAX_DEPTH {
                    skip_depth += 1;
                } else {
                    stack.push(Node {
                        name: element_name(&e),
                        attrs: attributes(&e),
                        ..Node::default()
                    });
                }
            }
            Event::End(_) => {
                if skip_depth > 0 {
                    skip_depth -= 1;
                } else if let Some(node) = stack.pop() {
                    match stack.last_mut() {
                        Some(parent) => parent.children.push(node),
                        None => root = Some(node),
                    }
                }
            }
            Event::Text(t) => {
                if skip_depth == 0 {
                    if let Some(top) = stack.last_mut() {
                        match t.unescape() {
                            Ok(s) => top.text.push_str(&s),
                            Err(_) => top.text.push_str(&String::from_utf8_lossy(&t)),
                        }
                    }
                }
            }
            Event::CData(c) => {
                if skip_depth == 0 {
                    if let Some(top) = stack.last_mut() {
                        top.text.push_str(&String::from_utf8_lossy(&c));
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }

    while let Some(node) = stack.pop() {
        match stack.last_mut() {
            Some(parent) => parent.children.push(node),
            None => root = root.or(Some(node)),
        }
    }
    root
}

fn parse_rfc822(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc2822(s.trim())
        .or_else(|_| DateTime::parse_from_rfc3339(s.trim()))
        .ok()
        .map(|d| d.with_timezone(&Utc))
}

fn parse_rfc3339(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .or_else(|_| DateTime::parse_from_rfc2822(s.trim()))
        .ok()
        .map(|d| d.with_timezone(&Utc))
}

/// Absolute http(s) form of `href`, resolving it against the feed URL.
fn absolute_link(href: &str, source: &str) -> Option<String> {
    let href = href.trim();
    if href.is_empty() {
        return None;
    }
    let resolved = match url::Url::parse(href) {
        Ok(u) => u,
        Err(url::ParseError::RelativeUrlWithoutBase) => url::Url::parse(source).ok()?.join(href).ok()?,
        Err(_) => return None,
    };
    matches!(resolved.scheme(), "http" | "https").then(|| resolved.to_string())
}

struct RawEntry {
    guid: Option<String>,
    title: Option<String>,
    link: Option<String>,
    date_text: Option<String>,
    date: Option<DateTime<Utc>>,
    summary: Option<String>,
    enclosure: Option<String>,
}

fn normalize(raw: RawEntry, source: &str, fetched_at: DateTime<Utc>) -> Option<FeedItem> {
    if raw.guid.is_none() && raw.link.is_none() && raw.title.is_none() {
        return None;
    }
    let title = raw.title.unwrap_or_default();
    let id = match (raw.guid, &raw.link) {
        (Some(g), _) => g,
        (None, Some(l)) => l.clone(),
        (None, None) => {
            let mut h = Sha256::new();
            h.update(title.as_bytes());
            h.update(b"\n");
            h.update(raw.date_text.as_deref().unwrap_or("").as_bytes());
            format!("sha256:{}", hex::encode(h.finalize()))
        }
    };
    let (published_at, synthetic_time) = match raw.date {
        Some(d) => (d, false),
        None => (fetched_at, true),
    };
    Some(FeedItem {
        id,
        title,
        link: raw.link,
        published_at,
        synthetic_time,
        summary: raw.summary,
        enclosure_url: raw.enclosure,
        source: source.to_owned(),
    })
}

fn rss_entry(item: &Node, source: &str) -> RawEntry {
    let date_text = item.text_of("pubDate");
    RawEntry {
        guid: item.text_of("guid"),
        title: item.text_of("title"),
        link: item.text_of("link").and_then(|l| absolute_link(&l, source)),
        date: date_text.as_deref().and_then(parse_rfc822),
        date_text,
        summary: item.text_of("description"),
        enclosure: item
            .children_named("enclosure")
            .find_map(|e| e.attr("url").and_then(|u| absolute_link(u, source))),
    }
}

fn atom_entry(entry: &Node, source: &str) -> RawEntry {
    let links: Vec<&Node> = entry.children_named("link").collect();
    let link = links
        .iter()
        .filter(|l| matches!(l.attr("rel"), None | Some("alternate")))
        .find_map(|l| l.attr("href").and_then(|h| absolute_link(h, source)));
    let enclosure = links
        .iter()
        .filter(|l| l.attr("rel") == Some("enclosure"))
        .find_map(|l| l.attr("href").and_then(|h| absolute_link(h, source)));
    let date_text = entry.text_of("updated").or_else(|| entry.text_of("published"));
    RawEntry {
        guid: entry.text_of("id"),
        title: entry.text_of("title"),
        link,
        date: date_text.as_deref().and_then(parse_rfc3339),
        date_text,
        summary: entry.text_of("summary").or_else(|| entry.text_of("content")),
        enclosure,
    }
}

/// Parses a feed document. `source` is the feed URL, used to resolve
/// relative links and to tag items; `fetched_at` stands in for missing
/// timestamps.
pub fn parse_feed(
    bytes: &[u8],
    declared: FeedFormat,
    source: &str,
    fetched_at: DateTime<Utc>,
) -> Result<ParsedFeed, FeedError> {
    let root = build_tree(bytes).ok_or(FeedError::MalformedFeed("no root element".into()))?;
    let format = match (root.name.as_str(), declared) {
        ("rss", FeedFormat::Rss | FeedFormat::Auto) => FeedFormat::Rss,
        ("feed", FeedFormat::Atom | FeedFormat::Auto) => FeedFormat::Atom,
        (other, _) => {
            return Err(FeedError::MalformedFeed(format!(
                "root element <{other}> is not a supported feed"
            )))
        }
    };

    let raw: Vec<RawEntry> = match format {
        FeedFormat::Rss => root
            .children_named("channel")
            .flat_map(|c| c.children_named("item"))
            .map(|i| rss_entry(i, source))
            .collect(),
        _ => root
            .children_named("entry")
            .map(|e| atom_entry(e, source))
            .collect(),
    };
    let total = raw.len();
    let items: Vec<FeedItem> = raw
        .into_iter()
        .filter_map(|r| normalize(r, source, fetched_at))
        .collect();
    Ok(ParsedFeed {
        format,
        skipped: total - items.len(),
        items,
    })
}
