use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::header::SET_COOKIE;
use axum::http::HeaderValue;
use axum::response::{IntoResponse, Response};
use chrono::{DateTime, Utc};
use dashgate_core::identity::{ServiceCredential, UserAccount};
use dashgate_core::layout::DashboardLayout;
use dashgate_core::UserId;
use serde::{Deserialize, Serialize};

use super::{parse_json, ApiJson};
use crate::auth::{Session, SESSION_COOKIE};
use crate::error::{ApiError, ApiOk, ApiResult};
use crate::AppState;

/// What clients see of an account; the digest stays server-side.
#[derive(Debug, Serialize)]
pub struct UserView {
    pub user_id: UserId,
    pub username: String,
    pub display_name: String,
    pub admin: bool,
    pub created_at: DateTime<Utc>,
}

impl From<UserAccount> for UserView {
    fn from(a: UserAccount) -> Self {
        UserView {
            user_id: a.user_id,
            username: a.username,
            display_name: a.display_name,
            admin: a.admin,
            created_at: a.created_at,
        }
    }
}

#[derive(Deserialize)]
pub struct RegisterBody {
    username: String,
    password: String,
    #[serde(default)]
    display_name: Option<String>,
}

pub async fn register(State(state): State<AppState>, ApiJson(body): ApiJson<RegisterBody>) -> ApiResult<UserView> {
    let identity = state.platform.identity.clone();
    let account = tokio::task::spawn_blocking(move || {
        let display = body.display_name.unwrap_or_else(|| body.username.clone());
        identity.register_user(&body.username, &body.password, &display)
    })
    .await
    .map_err(ApiError::internal)??;
    Ok(ApiOk(account.into()))
}

#[derive(Deserialize)]
pub struct LoginBody {
    username: String,
    password: String,
}

#[derive(Serialize)]
pub struct LoginData {
    token: String,
    expires_at: DateTime<Utc>,
    user: UserView,
}

pub async fn login(State(state): State<AppState>, ApiJson(body): ApiJson<LoginBody>) -> Result<Response, ApiError> {
    let identity = state.platform.identity.clone();
    let session = tokio::task::spawn_blocking(move || identity.authenticate(&body.username, &body.password))
        .await
        .map_err(ApiError::internal)??;
    let account = state
        .platform
        .identity
        .account(&session.user_id)?
        .ok_or_else(|| ApiError::internal("account vanished during login"))?;
    let max_age = (session.expires_at - session.issued_at).num_seconds().max(0);
    let cookie = format!("{SESSION_COOKIE}={}; Path=/; HttpOnly; SameSite=Lax; Max-Age={max_age}", session.token);
    let mut resp = ApiOk(LoginData {
        token: session.token,
        expires_at: session.expires_at,
        user: account.into(),
    })
    .into_response();
    resp.headers_mut()
        .insert(SET_COOKIE, HeaderValue::from_str(&cookie).map_err(ApiError::internal)?);
    Ok(resp)
}

#[derive(Deserialize)]
struct LogoutBody {
    #[serde(default)]
    layout: Option<DashboardLayout>,
}

#[derive(Serialize)]
pub struct Ack {
    pub done: bool,
}

/// The body is optional; a client may hand back its layout copy to be
/// committed before the session ends.
pub async fn logout(State(state): State<AppState>, session: Session, body: Bytes) -> Result<Response, ApiError> {
    let pending = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        parse_json::<LogoutBody>(&body)?.layout
    };
    state.platform.identity.logout(&session.token, pending)?;
    let mut resp = ApiOk(Ack { done: true }).into_response();
    resp.headers_mut().insert(
        SET_COOKIE,
        HeaderValue::from_static("session=; Path=/; HttpOnly; SameSite=Lax; Max-Age=0"),
    );
    Ok(resp)
}

pub async fn me(session: Session) -> ApiResult<UserView> {
    Ok(ApiOk(session.account.into()))
}

#[derive(Deserialize)]
pub struct ProfileBody {
    display_name: String,
}

pub async fn update_profile(
    State(state): State<AppState>,
    session: Session,
    ApiJson(body): ApiJson<ProfileBody>,
) -> ApiResult<UserView> {
    let name = body.display_name.trim();
    if name.is_empty() || name.chars().count() > 128 {
        return Err(ApiError::bad_request("display_name must be 1-128 characters"));
    }
    let acc = state
        .platform
        .identity
        .update_display_name(&session.account.user_id, name)?;
    Ok(ApiOk(acc.into()))
}

#[derive(Deserialize)]
pub struct AttachBody {
    identity: String,
    secret: String,
}

pub async fn attach_identity(
    State(state): State<AppState>,
    session: Session,
    Path(service_key): Path<String>,
    ApiJson(body): ApiJson<AttachBody>,
) -> ApiResult<ServiceCredential> {
    let cred = state
        .platform
        .identity
        .attach_service_identity(&session.token, &service_key, &body.identity, &body.secret)?;
    Ok(ApiOk(cred))
}

pub async fn list_identities(State(state): State<AppState>, session: Session) -> ApiResult<Vec<ServiceCredential>> {
    Ok(ApiOk(
        state
            .platform
            .identity
            .list_service_identities(&session.account.user_id)?,
    ))
}
