#![allow(dead_code)]

use std::sync::Arc;

use dashgate_core::identity::SessionToken;
use dashgate_core::store::{MemoryStore, Store};
use dashgate_core::{ManualClock, Platform, PlatformConfig, UserId};

pub struct TestPlatform {
    pub platform: Platform,
    pub clock: Arc<ManualClock>,
    pub store: Arc<dyn Store>,
}

pub fn config() -> PlatformConfig {
    PlatformConfig {
        gateway_base: "http://gw.test/proxy".to_owned(),
        password_rounds: 1_000,
        admin_users: vec!["root".to_owned()],
        ..PlatformConfig::default()
    }
}

pub fn platform_with(store: Arc<dyn Store>, config: PlatformConfig) -> TestPlatform {
    let clock = Arc::new(ManualClock::default());
    let platform = Platform::open(store.clone(), clock.clone(), config, &[]).expect("platform");
    TestPlatform { platform, clock, store }
}

pub fn platform() -> TestPlatform {
    platform_with(Arc::new(MemoryStore::new()), config())
}

impl TestPlatform {
    pub fn user(&self, name: &str) -> UserId {
        self.platform
            .identity
            .register_user(name, "correct horse", name)
            .expect("register")
            .user_id
    }

    pub fn login(&self, name: &str) -> SessionToken {
        self.platform
            .identity
            .authenticate(name, "correct horse")
            .expect("login")
    }
}
