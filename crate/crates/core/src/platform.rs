//! Wires the services together over one store and one clock.

use std::sync::Arc;
use std::time::Duration;

use crate::clock::Clock;
use crate::config::PlatformConfig;
use crate::feeds::FeedFetcher;
use crate::identity::{IdentityConfig, IdentityService, SealingKey};
use crate::layout::LayoutService;
use crate::proxy::{EgressPolicy, ProxyError, ProxyService, RewriteRule};
use crate::registry::{RegistryError, WidgetRegistry};
use crate::store::{Store, StoreError};
use crate::telecom::{TelecomError, TelecomService};

#[derive(Debug, thiserror::Error)]
pub enum PlatformError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("catalog seeding failed: {0}")]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Telecom(#[from] TelecomError),
}

pub struct Platform {
    pub config: PlatformConfig,
    pub store: Arc<dyn Store>,
    pub clock: Arc<dyn Clock>,
    pub registry: Arc<WidgetRegistry>,
    pub layout: Arc<LayoutService>,
    pub identity: Arc<IdentityService>,
    pub telecom: Arc<TelecomService>,
    pub feeds: Arc<FeedFetcher>,
    pub proxy: Arc<ProxyService>,
}

impl Platform {
    /// `self_addresses` are extra `host:port` strings the gateway listens
    /// on; the proxy refuses to fetch them.
    pub fn open(
        store: Arc<dyn Store>,
        clock: Arc<dyn Clock>,
        config: PlatformConfig,
        self_addresses: &[String],
    ) -> Result<Self, PlatformError> {
        let rule = RewriteRule::new(&config.gateway_base)?;

        let registry = Arc::new(WidgetRegistry::open(store.clone(), clock.clone())?);
        registry.seed_builtins()?;
        for feed in &config.catalog.feeds {
            registry.seed_feed(feed)?;
        }
        for doc in &config.catalog.manifests {
            match registry.register_document(doc) {
                Ok(_) | Err(RegistryError::DuplicateDescriptor(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }

        let layout = Arc::new(LayoutService::new(store.clone(), registry.clone()));
        let sealing = SealingKey::load_or_create(store.as_ref())?;
        let identity = Arc::new(IdentityService::new(
            store.clone(),
            clock.clone(),
            IdentityConfig {
                session_ttl: chrono::Duration::seconds(config.session_ttl_s as i64),
                password_rounds: config.password_rounds,
                admin_users: config.admin_users.clone(),
            },
            sealing,
            layout.clone(),
            registry.clone(),
        ));
        let telecom = Arc::new(TelecomService::open(
            store.clone(),
            clock.clone(),
            config.telecom.clone(),
            identity.clone(),
            layout.clone(),
            registry.clone(),
        )?);

        let policy = EgressPolicy::new(&rule, &config.egress, self_addresses);
        let feeds = Arc::new(FeedFetcher::new(
            clock.clone(),
            Duration::from_secs(config.egress.timeout_s.max(1)),
            Some(Arc::new(policy.clone())),
        ));
        let proxy = Arc::new(ProxyService::new(
            rule,
            policy,
            &config.egress,
            identity.clone(),
            layout.clone(),
            registry.clone(),
        ));

        Ok(Platform {
            config,
            store,
            clock,
            registry,
            layout,
            identity,
            telecom,
            feeds,
            proxy,
        })
    }
}
