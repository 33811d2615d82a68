//! Typed settings for the platform. The gateway reads these from its TOML
//! config file; every field has a default so an empty file is valid.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformConfig {
    /// Absolute URL of the proxy endpoint as seen by browsers.
    pub gateway_base: String,
    pub session_ttl_s: u64,
    /// PBKDF2 rounds for password digests.
    pub password_rounds: u32,
    /// Usernames allowed to read operator analytics.
    pub admin_users: Vec<String>,
    pub egress: EgressConfig,
    pub telecom: TelecomConfig,
    pub catalog: CatalogSeed,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            gateway_base: "http://localhost:8080/proxy".to_owned(),
            session_ttl_s: 24 * 60 * 60,
            password_rounds: 100_000,
            admin_users: Vec::new(),
            egress: EgressConfig::default(),
            telecom: TelecomConfig::default(),
            catalog: CatalogSeed::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgressConfig {
    /// Extra `host` or `host:port` entries the proxy must never fetch.
    pub deny_hosts: Vec<String>,
    /// Refuse IP-literal targets in private, loopback and link-local ranges.
    pub block_private: bool,
    pub timeout_s: u64,
    /// Additional attempts after a connection failure.
    pub retries: u32,
}

impl Default for EgressConfig {
    fn default() -> Self {
        EgressConfig {
            deny_hosts: Vec::new(),
            block_private: false,
            timeout_s: 10,
            retries: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelecomConfig {
    /// Calls left in Inviting or Ringing this long are timed out.
    pub ring_timeout_s: u64,
    /// `user@<local_domain>` resolves to the registered user `user`.
    pub local_domain: String,
    pub simulated_endpoints: Vec<SimulatedEndpoint>,
}

impl Default for TelecomConfig {
    fn default() -> Self {
        TelecomConfig {
            ring_timeout_s: 30,
            local_domain: "dashboard.local".to_owned(),
            simulated_endpoints: vec![SimulatedEndpoint {
                address: "echo@sim.test".to_owned(),
                auto_answer: true,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedEndpoint {
    pub address: String,
    #[serde(default)]
    pub auto_answer: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogSeed {
    /// Feed widgets registered at boot next to the builtin enablers.
    pub feeds: Vec<SeedFeed>,
    /// Extra manifest documents registered at boot.
    pub manifests: Vec<String>,
}

impl Default for CatalogSeed {
    fn default() -> Self {
        CatalogSeed {
            feeds: vec![
                SeedFeed {
                    title: "News".to_owned(),
                    source: "https://feeds.bbci.co.uk/news/rss.xml".to_owned(),
                    refresh: 300,
                },
                SeedFeed {
                    title: "Pictures".to_owned(),
                    source: "https://www.flickr.com/services/feeds/photos_public.gne?format=atom"
                        .to_owned(),
                    refresh: 600,
                },
            ],
            manifests: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedFeed {
    pub title: String,
    pub source: String,
    pub refresh: u32,
}
