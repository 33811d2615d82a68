use axum::extract::{RawQuery, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use dashgate_core::proxy::{parse_proxy_query, ProxyRequest};

use crate::auth::Session;
use crate::error::ApiError;
use crate::AppState;

/// `GET /proxy?url=&module=`. The body is passed through with the upstream
/// content type; markup comes back with its links rewritten.
pub async fn proxy(
    State(state): State<AppState>,
    session: Session,
    RawQuery(query): RawQuery,
) -> Result<Response, ApiError> {
    let (target, module) = query
        .as_deref()
        .and_then(parse_proxy_query)
        .ok_or_else(|| ApiError::bad_request("url parameter is required"))?;
    let module = module.ok_or_else(|| ApiError::bad_request("module parameter is required"))?;
    let doc = state
        .platform
        .proxy
        .proxy_fetch(&ProxyRequest {
            target_url: target,
            module_instance_id: module,
            session: session.token,
        })
        .await?;
    let mut resp = (StatusCode::OK, doc.body).into_response();
    let headers = resp.headers_mut();
    if let Ok(ct) = HeaderValue::from_str(&doc.content_type) {
        headers.insert(CONTENT_TYPE, ct);
    }
    headers.insert("x-rewrite-count", HeaderValue::from(doc.rewrite_count));
    headers.insert("x-upstream-status", HeaderValue::from(doc.upstream_status));
    Ok(resp)
}
