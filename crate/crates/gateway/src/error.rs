//! The JSON envelope and the mapping from domain errors to HTTP statuses.

use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use dashgate_core::identity::IdentityError;
use dashgate_core::layout::LayoutError;
use dashgate_core::proxy::ProxyError;
use dashgate_core::registry::{ManifestError, RegistryError};
use dashgate_core::store::StoreError;
use dashgate_core::telecom::TelecomError;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
}

/// `{ok, data}` on success, `{ok, error}` on failure; never both.
#[derive(Debug, Serialize)]
pub struct Envelope<T> {
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

pub struct ApiOk<T>(pub T);

impl<T: Serialize> IntoResponse for ApiOk<T> {
    fn into_response(self) -> Response {
        Json(Envelope {
            ok: true,
            data: Some(self.0),
            error: None,
        })
        .into_response()
    }
}

pub type ApiResult<T> = Result<ApiOk<T>, ApiError>;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub upstream_status: Option<u16>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            upstream_status: None,
        }
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "invalid_token", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    pub fn internal(err: impl std::fmt::Display) -> Self {
        tracing::error!(error = %err, "internal error");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut resp = (
            self.status,
            Json(Envelope::<()> {
                ok: false,
                data: None,
                error: Some(ErrorBody {
                    code: self.code,
                    message: self.message,
                }),
            }),
        )
            .into_response();
        if let Some(s) = self.upstream_status {
            resp.headers_mut()
                .insert("x-upstream-status", HeaderValue::from(s));
        }
        resp
    }
}

use StatusCode as S;

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::internal(e)
    }
}

impl From<IdentityError> for ApiError {
    fn from(e: IdentityError) -> Self {
        let msg = e.to_string();
        match e {
            IdentityError::DuplicateUsername => Self::new(S::CONFLICT, "duplicate_username", msg),
            IdentityError::WeakPassword => Self::new(S::UNPROCESSABLE_ENTITY, "weak_password", msg),
            IdentityError::InvalidUsername => Self::new(S::UNPROCESSABLE_ENTITY, "invalid_username", msg),
            IdentityError::BadCredentials => Self::new(S::UNAUTHORIZED, "bad_credentials", msg),
            IdentityError::InvalidToken => Self::new(S::UNAUTHORIZED, "invalid_token", msg),
            IdentityError::ExpiredToken => Self::new(S::UNAUTHORIZED, "expired_token", msg),
            IdentityError::UnknownService(_) => Self::new(S::UNPROCESSABLE_ENTITY, "unknown_service", msg),
            IdentityError::InvalidIdentity => Self::new(S::UNPROCESSABLE_ENTITY, "invalid_identity", msg),
            IdentityError::Layout(l) => l.into(),
            IdentityError::Store(s) => s.into(),
            other => ApiError::internal(other),
        }
    }
}

impl From<LayoutError> for ApiError {
    fn from(e: LayoutError) -> Self {
        let msg = e.to_string();
        match e {
            LayoutError::UnknownUser(_) => Self::new(S::NOT_FOUND, "unknown_user", msg),
            LayoutError::VersionConflict { .. } => Self::new(S::CONFLICT, "version_conflict", msg),
            LayoutError::UnknownTab(_) => Self::new(S::NOT_FOUND, "unknown_tab", msg),
            LayoutError::UnknownDescriptor(_) => Self::new(S::UNPROCESSABLE_ENTITY, "unknown_descriptor", msg),
            LayoutError::UnknownInstance(_) => Self::new(S::NOT_FOUND, "unknown_instance", msg),
            LayoutError::PositionOutOfRange { .. } => {
                Self::new(S::UNPROCESSABLE_ENTITY, "position_out_of_range", msg)
            }
            LayoutError::DuplicateTabName(_) => Self::new(S::CONFLICT, "duplicate_tab_name", msg),
            LayoutError::InvalidTabName => Self::new(S::UNPROCESSABLE_ENTITY, "invalid_tab_name", msg),
            LayoutError::LastTabUndeletable => Self::new(S::CONFLICT, "last_tab_undeletable", msg),
            LayoutError::InvalidLayout(_) => Self::new(S::UNPROCESSABLE_ENTITY, "invalid_layout", msg),
            LayoutError::Store(s) => s.into(),
        }
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let msg = e.to_string();
        match e {
            RegistryError::Manifest(m) => {
                let code = match m {
                    ManifestError::Malformed(_) => "malformed_manifest",
                    ManifestError::UnknownLifecycleEvent(_) => "unknown_lifecycle_event",
                    ManifestError::UnknownPermission(_) => "unknown_permission",
                    ManifestError::MissingServiceKey => "missing_service_key",
                };
                Self::new(S::UNPROCESSABLE_ENTITY, code, msg)
            }
            RegistryError::DuplicateDescriptor(_) => Self::new(S::CONFLICT, "duplicate_descriptor", msg),
            RegistryError::UnknownDescriptor(_) => Self::new(S::NOT_FOUND, "unknown_descriptor", msg),
            RegistryError::Store(s) => s.into(),
        }
    }
}

impl From<TelecomError> for ApiError {
    fn from(e: TelecomError) -> Self {
        let msg = e.to_string();
        match e {
            TelecomError::SlotTaken(_) => Self::new(S::CONFLICT, "slot_taken", msg),
            TelecomError::InvalidSlot => Self::new(S::UNPROCESSABLE_ENTITY, "invalid_slot", msg),
            TelecomError::InvalidAddress(_) => Self::new(S::UNPROCESSABLE_ENTITY, "invalid_address", msg),
            TelecomError::InvalidName => Self::new(S::UNPROCESSABLE_ENTITY, "invalid_name", msg),
            TelecomError::UnknownContact => Self::new(S::NOT_FOUND, "unknown_contact", msg),
            TelecomError::UnknownInstance(_) => Self::new(S::NOT_FOUND, "unknown_instance", msg),
            TelecomError::UnknownCall(_) => Self::new(S::NOT_FOUND, "unknown_call", msg),
            TelecomError::IllegalTransition { .. } => Self::new(S::CONFLICT, "illegal_transition", msg),
            TelecomError::UnknownRecipient(_) => Self::new(S::NOT_FOUND, "unknown_recipient", msg),
            TelecomError::UnknownMessage(_) => Self::new(S::NOT_FOUND, "unknown_message", msg),
            TelecomError::UnknownUser => Self::new(S::NOT_FOUND, "unknown_user", msg),
            TelecomError::NoteTooLong => Self::new(S::UNPROCESSABLE_ENTITY, "note_too_long", msg),
            TelecomError::EmptyMessage => Self::new(S::UNPROCESSABLE_ENTITY, "empty_message", msg),
            TelecomError::Identity(i) => i.into(),
            TelecomError::Layout(l) => l.into(),
            TelecomError::Registry(r) => r.into(),
            TelecomError::Store(s) => s.into(),
        }
    }
}

impl From<ProxyError> for ApiError {
    fn from(e: ProxyError) -> Self {
        let msg = e.to_string();
        match e {
            ProxyError::UnsupportedScheme(_) => Self::new(S::UNPROCESSABLE_ENTITY, "unsupported_scheme", msg),
            ProxyError::InvalidGatewayBase(_) => ApiError::internal(msg),
            ProxyError::ForbiddenTarget(_) => Self::new(S::FORBIDDEN, "forbidden_target", msg),
            ProxyError::UpstreamTimeout => Self::new(S::GATEWAY_TIMEOUT, "upstream_timeout", msg),
            ProxyError::UpstreamError { status, .. } => ApiError {
                upstream_status: status,
                ..Self::new(S::BAD_GATEWAY, "upstream_error", msg)
            },
            ProxyError::Identity(i) => i.into(),
            ProxyError::Layout(l) => l.into(),
        }
    }
}
