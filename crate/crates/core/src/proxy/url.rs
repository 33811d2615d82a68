//! Gateway URL form: `<gateway_base>?url=<percent-encoded target>&module=<id>`.

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use super::ProxyError;
use crate::ids::InstanceId;

/// Everything except RFC 3986 unreserved characters is encoded.
const PARAM: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

/// The attributes whose values are rewritten.
pub const REWRITABLE_ATTRIBUTES: [&str; 3] = ["href", "src", "action"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteRule {
    gateway_base: String,
}

impl RewriteRule {
    pub fn new(gateway_base: &str) -> Result<Self, ProxyError> {
        let parsed = url::Url::parse(gateway_base)
            .map_err(|_| ProxyError::InvalidGatewayBase(gateway_base.to_owned()))?;
        if !matches!(parsed.scheme(), "http" | "https")
            || !parsed.has_host()
            || parsed.fragment().is_some()
        {
            return Err(ProxyError::InvalidGatewayBase(gateway_base.to_owned()));
        }
        Ok(RewriteRule {
            gateway_base: gateway_base.to_owned(),
        })
    }

    pub fn gateway_base(&self) -> &str {
        &self.gateway_base
    }

    /// True for URLs that already point at the proxy endpoint.
    pub fn is_gateway_url(&self, candidate: &str) -> bool {
        match candidate.strip_prefix(&self.gateway_base) {
            Some(rest) => rest.is_empty() || rest.starts_with('?') || rest.starts_with('&'),
            None => false,
        }
    }

    fn separator(&self) -> char {
        if self.gateway_base.contains('?') {
            '&'
        } else {
            '?'
        }
    }
}

/// Returns true if `s` starts with an `http:` or `https:` scheme.
pub(crate) fn has_http_scheme(s: &str) -> bool {
    let lower = s.get(..8).unwrap_or(s).to_ascii_lowercase();
    lower.starts_with("http:") || lower.starts_with("https:")
}

/// Builds the proxy URL for `target`. URLs already pointing at the gateway
/// are returned unchanged.
pub fn canonical_proxy_url(
    rule: &RewriteRule,
    target: &str,
    module: &InstanceId,
) -> Result<String, ProxyError> {
    if rule.is_gateway_url(target) {
        return Ok(target.to_owned());
    }
    if !has_http_scheme(target) {
        return Err(ProxyError::UnsupportedScheme(target.to_owned()));
    }
    Ok(format!(
        "{}{}url={}&module={}",
        rule.gateway_base,
        rule.separator(),
        utf8_percent_encode(target, PARAM),
        utf8_percent_encode(module.as_str(), PARAM),
    ))
}

/// Recovers `(target, module)` from a gateway URL. Accepts both the
/// encoded form and the raw `?url=http://...` form.
pub fn parse_proxy_url(rule: &RewriteRule, proxy_url: &str) -> Option<(String, Option<InstanceId>)> {
    if !rule.is_gateway_url(proxy_url) {
        return None;
    }
    let query = &proxy_url[rule.gateway_base.len()..];
    let query = query.trim_start_matches(['?', '&']);
    parse_proxy_query(query)
}

/// Parses the query string of a proxy request.
///
/// In the raw form the target itself may contain `&`, so everything between
/// `url=` and a trailing `&module=` belongs to the target.
pub fn parse_proxy_query(query: &str) -> Option<(String, Option<InstanceId>)> {
    let mut target = None;
    let mut module = None;
    let mut rest = query;
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix("url=") {
            let (raw, tail) = match after.rfind("&module=") {
                Some(i) => (&after[..i], &after[i + 1..]),
                None => (after, ""),
            };
            target = Some(decode_component(raw));
            rest = tail;
            continue;
        }
        let (pair, tail) = rest.split_once('&').unwrap_or((rest, ""));
        if let Some(m) = pair.strip_prefix("module=") {
            module = Some(InstanceId::from(decode_component(m)));
        }
        rest = tail;
    }
    target.map(|t| (t, module))
}

fn decode_component(raw: &str) -> String {
    // `+` is left alone: the encoder never emits it for spaces.
    percent_decode_str(raw).decode_utf8_lossy().into_owned()
}
