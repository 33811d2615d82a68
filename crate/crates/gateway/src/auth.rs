//! Session extraction: `Authorization: Bearer <token>` or the `session`
//! cookie set at login (iframes cannot send headers).

use axum::extract::FromRequestParts;
use axum::http::header::{AUTHORIZATION, COOKIE};
use axum::http::request::Parts;
use axum::http::StatusCode;
use dashgate_core::identity::UserAccount;

use crate::error::ApiError;
use crate::AppState;

pub const SESSION_COOKIE: &str = "session";

pub fn token_from_parts(parts: &Parts) -> Option<String> {
    if let Some(v) = parts.headers.get(AUTHORIZATION).and_then(|v| v.to_str().ok()) {
        let mut it = v.splitn(2, ' ');
        if let (Some(scheme), Some(token)) = (it.next(), it.next()) {
            if scheme.eq_ignore_ascii_case("bearer") {
                return Some(token.trim().to_owned());
            }
        }
        return None;
    }
    parts
        .headers
        .get_all(COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|kv| kv.trim().split_once('='))
        .find(|(k, _)| *k == SESSION_COOKIE)
        .map(|(_, v)| v.to_owned())
}

/// The authenticated caller.
pub struct Session {
    pub token: String,
    pub account: UserAccount,
}

impl FromRequestParts<AppState> for Session {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let token = token_from_parts(parts)
            .ok_or_else(|| ApiError::unauthorized("missing session token"))?;
        let account = state.platform.identity.resolve_session(&token)?;
        Ok(Session { token, account })
    }
}

/// A session whose account carries the admin flag.
pub struct AdminSession(pub Session);

impl FromRequestParts<AppState> for AdminSession {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let s = Session::from_request_parts(parts, state).await?;
        if !s.account.admin {
            return Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "admin account required"));
        }
        Ok(AdminSession(s))
    }
}
