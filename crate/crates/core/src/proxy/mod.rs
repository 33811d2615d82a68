//! The same-origin proxy ("module download controller").
//!
//! Widgets never talk to third-party origins directly. Every upstream
//! document is fetched here, and markup responses are rewritten so that all
//! `href`/`src`/`action` references point back through the gateway.

mod rewrite;
mod url;

pub use self::rewrite::{rewrite_document, RewriteOutput, MODULE_NAV_ATTR};
pub use self::url::{
    canonical_proxy_url, parse_proxy_query, parse_proxy_url, RewriteRule, REWRITABLE_ATTRIBUTES,
};

use std::net::IpAddr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::EgressConfig;
use crate::identity::{IdentityError, IdentityService};
use crate::ids::InstanceId;
use crate::layout::{LayoutError, LayoutService};
use crate::registry::WidgetRegistry;

#[derive(Debug, thiserror::Error)]
pub enum ProxyError {
    #[error("unsupported scheme in {0:?}; only http and https are proxied")]
    UnsupportedScheme(String),
    #[error("invalid gateway base {0:?}")]
    InvalidGatewayBase(String),
    #[error("target {0:?} is not allowed by the egress policy")]
    ForbiddenTarget(String),
    #[error("upstream timed out")]
    UpstreamTimeout,
    #[error("upstream error: {message}")]
    UpstreamError { status: Option<u16>, message: String },
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyRequest {
    pub target_url: String,
    pub module_instance_id: InstanceId,
    pub session: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxiedDocument {
    pub body: Vec<u8>,
    pub content_type: String,
    pub rewrite_count: usize,
    pub upstream_status: u16,
}

/// True for HTML and XHTML media types.
pub fn is_markup(content_type: &str) -> bool {
    let essence = content_type
        .split(';')
        .next()
        .unwrap_or("")
        .trim()
        .to_ascii_lowercase();
    matches!(essence.as_str(), "text/html" | "application/xhtml+xml")
}

/// Which upstream targets may be fetched.
#[derive(Debug, Clone)]
pub struct EgressPolicy {
    /// (host, port) pairs; a `None` port denies every port on that host.
    denied: Vec<(String, Option<u16>)>,
    block_private: bool,
}

impl EgressPolicy {
    /// Builds the policy, always denying the gateway's own address.
    pub fn new(rule: &RewriteRule, config: &EgressConfig, extra_self: &[String]) -> Self {
        let mut denied = Vec::new();
        if let Ok(base) = ::url::Url::parse(rule.gateway_base()) {
            if let Some(host) = base.host_str() {
                denied.push((normalize_host(host), base.port_or_known_default()));
            }
        }
        for entry in config.deny_hosts.iter().chain(extra_self) {
            denied.push(parse_host_port(entry));
        }
        EgressPolicy {
            denied,
            block_private: config.block_private,
        }
    }

    pub fn check(&self, target: &str) -> Result<::url::Url, ProxyError> {
        let parsed = ::url::Url::parse(target).map_err(|_| ProxyError::ForbiddenTarget(target.to_owned()))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(ProxyError::ForbiddenTarget(target.to_owned()));
        }
        let host = parsed
            .host_str()
            .map(normalize_host)
            .ok_or_else(|| ProxyError::ForbiddenTarget(target.to_owned()))?;
        let port = parsed.port_or_known_default();
        let denied = self
            .denied
            .iter()
            .any(|(h, p)| h == &host && (p.is_none() || *p == port));
        if denied {
            return Err(ProxyError::ForbiddenTarget(target.to_owned()));
        }
        if self.block_private {
            if let Ok(ip) = host.parse::<IpAddr>() {
                if is_private(ip) {
                    return Err(ProxyError::ForbiddenTarget(target.to_owned()));
                }
            }
        }
        Ok(parsed)
    }
}

fn normalize_host(host: &str) -> String {
    host.trim_start_matches('[')
        .trim_end_matches(']')
        .to_ascii_lowercase()
}

fn parse_host_port(entry: &str) -> (String, Option<u16>) {
    match entry.rsplit_once(':') {
        Some((h, p)) if !h.contains(':') || h.starts_with('[') => match p.parse() {
            Ok(port) => (normalize_host(h), Some(port)),
            Err(_) => (normalize_host(entry), None),
        },
        _ => (normalize_host(entry), None),
    }
}

fn is_private(ip: IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => {
            v4.is_private() || v4.is_loopback() || v4.is_link_local() || v4.is_unspecified()
        }
        IpAddr::V6(v6) => {
            v6.is_loopback()
                || v6.is_unspecified()
                || (v6.segments()[0] & 0xfe00) == 0xfc00
                || (v6.segments()[0] & 0xffc0) == 0xfe80
        }
    }
}

pub struct ProxyService {
    rule: RewriteRule,
    policy: Arc<EgressPolicy>,
    client: reqwest::Client,
    retries: u32,
    identity: Arc<IdentityService>,
    layout: Arc<LayoutService>,
    registry: Arc<WidgetRegistry>,
}

impl ProxyService {
    pub fn new(
        rule: RewriteRule,
        policy: EgressPolicy,
        config: &EgressConfig,
        identity: Arc<IdentityService>,
        layout: Arc<LayoutService>,
        registry: Arc<WidgetRegistry>,
    ) -> Self {
        let policy = Arc::new(policy);
        let redirect_policy = {
            let policy = policy.clone();
            reqwest::redirect::Policy::custom(move |attempt| {
                if attempt.previous().len() >= 5 {
                    attempt.error("too many redirects")
                } else if policy.check(attempt.url().as_str()).is_err() {
                    attempt.error("redirect target denied by egress policy")
                } else {
                    attempt.follow()
                }
            })
        };
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s.max(1)))
            .redirect(redirect_policy)
            .build()
            .expect("static reqwest configuration");
        ProxyService {
            rule,
            policy,
            client,
            retries: config.retries,
            identity,
            layout,
            registry,
        }
    }

    pub fn rule(&self) -> &RewriteRule {
        &self.rule
    }

    pub fn policy(&self) -> &EgressPolicy {
        &self.policy
    }

    /// Fetches `request.target_url` on behalf of a module of the session's
    /// user, injecting the user's attached identity for third-party widgets.
    pub async fn proxy_fetch(&self, request: &ProxyRequest) -> Result<ProxiedDocument, ProxyError> {
        let user = self.identity.resolve_session(&request.session)?;
        let instance = self
            .layout
            .find_instance(&user.user_id, &request.module_instance_id)?;
        let target = self.policy.check(&request.target_url)?;

        let credential = match self.registry.descriptor(&instance.descriptor_id) {
            Some(d) if d.third_party => match d.service_key {
                Some(key) => self.identity.service_secret(&user.user_id, &key)?,
                None => None,
            },
            _ => None,
        };

        let mut attempt = 0;
        let response = loop {
            let mut req = self.client.get(target.clone());
            if let Some((identity, secret)) = &credential {
                req = req.basic_auth(identity, Some(secret));
            }
            match req.send().await {
                Ok(resp) => break resp,
                Err(e) if e.is_timeout() => return Err(ProxyError::UpstreamTimeout),
                Err(e) if e.is_connect() && attempt < self.retries => {
                    attempt += 1;
                    tracing::debug!(target = %target, attempt, "retrying upstream after connect failure");
                }
                Err(e) => {
                    return Err(ProxyError::UpstreamError {
                        status: None,
                        message: e.to_string(),
                    })
                }
            }
        };

        let status = response.status();
        if !status.is_success() {
            return Err(ProxyError::UpstreamError {
                status: Some(status.as_u16()),
                message: format!("upstream answered {status}"),
            });
        }
        let final_url = response.url().to_string();
        let content_type = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("application/octet-stream")
            .to_owned();
        let body = response.bytes().await.map_err(|e| {
            if e.is_timeout() {
                ProxyError::UpstreamTimeout
            } else {
                ProxyError::UpstreamError {
                    status: Some(status.as_u16()),
                    message: e.to_string(),
                }
            }
        })?;

        if is_markup(&content_type) {
            let out = rewrite_document(&self.rule, &body, &final_url, &request.module_instance_id);
            Ok(ProxiedDocument {
                body: out.body,
                content_type,
                rewrite_count: out.rewrite_count,
                upstream_status: status.as_u16(),
            })
        } else {
            Ok(ProxiedDocument {
                body: body.to_vec(),
                content_type,
                rewrite_count: 0,
                upstream_status: status.as_u16(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(cfg: EgressConfig) -> EgressPolicy {
        let rule = RewriteRule::new("http://gw.test:8080/proxy").unwrap();
        EgressPolicy::new(&rule, &cfg, &["localhost:8080".to_owned()])
    }

    #[test]
    fn egress_denies_self_and_bad_schemes() {
        let p = policy(EgressConfig::default());
        assert!(p.check("http://gw.test:8080/proxy?url=x").is_err());
        assert!(p.check("http://GW.test:8080/anything").is_err());
        assert!(p.check("http://localhost:8080/").is_err());
        assert!(p.check("http://gw.test:9090/").is_ok());
        assert!(p.check("ftp://a.test/").is_err());
        assert!(p.check("file:///etc/passwd").is_err());
        assert!(p.check("http://127.0.0.1:4000/").is_ok());
    }

    #[test]
    fn egress_private_blocking_and_deny_list() {
        let p = policy(EgressConfig {
            block_private: true,
            deny_hosts: vec!["evil.test".into()],
            ..EgressConfig::default()
        });
        assert!(p.check("http://127.0.0.1:4000/").is_err());
        assert!(p.check("http://10.1.2.3/").is_err());
        assert!(p.check("http://[::1]:80/").is_err());
        assert!(p.check("http://evil.test:1234/").is_err());
        assert!(p.check("http://93.184.216.34/").is_ok());
    }

    #[test]
    fn markup_detection() {
        assert!(is_markup("text/html; charset=utf-8"));
        assert!(is_markup("application/xhtml+xml"));
        assert!(!is_markup("image/png"));
        assert!(!is_markup("application/json"));
    }
}
