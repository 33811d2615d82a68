//! Opaque identifiers.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            /// Generates a fresh random identifier.
            pub fn generate() -> Self {
                $name(format!(concat!($prefix, "{}"), uuid::Uuid::new_v4().simple()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

opaque_id!(UserId, "u-");
opaque_id!(TabId, "t-");
opaque_id!(InstanceId, "m-");
opaque_id!(
    /// Catalog identifiers are derived from manifest content, see
    /// [`crate::registry::descriptor_id_for`].
    DescriptorId,
    "w-"
);
opaque_id!(ContactId, "c-");
opaque_id!(CallId, "call-");
opaque_id!(MessageId, "msg-");
