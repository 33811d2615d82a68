//! Domain services for a converged-services dashboard: single sign-on
//! sessions, persisted per-user widget layouts, a widget catalog, a
//! same-origin rewriting proxy, feed ingestion and a simulated telecom
//! enabler layer.
//!
//! Everything persistent goes through the [`store::Store`] interface so the
//! gateway can run against an on-disk store in production and an in-memory
//! one in tests.

pub mod clock;
pub mod config;
pub mod feeds;
pub mod identity;
pub mod ids;
pub mod layout;
pub mod platform;
pub mod proxy;
pub mod registry;
pub mod store;
pub mod telecom;

pub use clock::{Clock, ManualClock, SystemClock};
pub use config::PlatformConfig;
pub use ids::{CallId, ContactId, DescriptorId, InstanceId, MessageId, TabId, UserId};
pub use platform::Platform;
