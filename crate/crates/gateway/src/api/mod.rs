//! Route table.

mod layout;
mod proxy;
mod session;
mod telecom;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request, State};
use axum::http::{Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tower_http::services::ServeDir;

use crate::error::ApiError;
use crate::AppState;

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/register", post(session::register))
        .route("/login", post(session::login))
        .route("/logout", post(session::logout))
        .route("/me", get(session::me))
        .route("/profile", post(session::update_profile))
        .route("/identity", get(session::list_identities))
        .route("/identity/{service_key}", post(session::attach_identity))
        .route("/layout", get(layout::get_layout))
        .route("/layout/ops", post(layout::apply_op))
        .route("/catalog", get(layout::list_catalog).post(layout::upload_manifest))
        .route("/catalog/{descriptor_id}/handlers", post(layout::bind_handler))
        .route("/module/{instance_id}/update", get(layout::module_update))
        .route("/poll", post(layout::poll))
        .route("/admin/usage", get(layout::usage_report))
        .route("/telecom/contacts", get(telecom::list_contacts).post(telecom::upsert_contact))
        .route("/telecom/contacts/import", post(telecom::import_contact))
        .route("/telecom/contacts/{contact_id}", delete(telecom::remove_contact))
        .route("/telecom/calls", get(telecom::list_calls).post(telecom::place_call))
        .route("/telecom/calls/{call_id}", get(telecom::get_call))
        .route("/telecom/calls/{call_id}/event", post(telecom::call_event))
        .route("/telecom/presence", get(telecom::own_presence).post(telecom::set_presence))
        .route("/telecom/presence/{username}", get(telecom::presence_of))
        .route("/telecom/im", get(telecom::list_im).post(telecom::send_im))
        .route("/telecom/im/{message_id}/read", post(telecom::read_im))
        .route("/telecom/voicemail", get(telecom::list_voicemail).post(telecom::deposit_voicemail))
        .route("/telecom/voicemail/{message_id}/read", post(telecom::read_voicemail))
        .fallback(unknown_route)
        .method_not_allowed_fallback(method_not_allowed);

    let mut app = Router::new()
        .nest("/api", api)
        .route("/proxy", get(proxy::proxy));
    app = match &state.ui.dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(builtin_index)).fallback(unknown_route),
    };
    app.layer(middleware::from_fn_with_state(state.clone(), notify_on_write))
        .with_state(state)
}

/// Wakes waiting polls after any successful mutating request.
async fn notify_on_write(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let mutating = !matches!(*req.method(), Method::GET | Method::HEAD | Method::OPTIONS)
        && !matches!(req.uri().path(), "/api/poll" | "/api/login");
    let resp = next.run(req).await;
    if mutating && resp.status().is_success() {
        state.notify_change();
    }
    resp
}

async fn unknown_route() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "unknown_route", "no such route")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this route")
}

async fn builtin_index() -> Html<&'static str> {
    Html(include_str!("index.html"))
}

/// `Json` with rejections turned into envelopes.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    S: Send + Sync,
    T: DeserializeOwned,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(r) => Err(json_rejection(r)),
        }
    }
}

fn json_rejection(r: JsonRejection) -> ApiError {
    let status = match r {
        JsonRejection::MissingJsonContentType(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
        JsonRejection::JsonSyntaxError(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    };
    ApiError::new(status, "invalid_body", r.body_text())
}

pub(crate) fn parse_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.to_string()))
}

