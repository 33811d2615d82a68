use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::HeaderMap;
use dashgate_core::layout::{DashboardLayout, LayoutOp, OpOutcome};
use dashgate_core::registry::{
    LifecycleEvent, UsageCounts, UsageEvent, WidgetDescriptor, WidgetKind,
};
use dashgate_core::{DescriptorId, InstanceId};
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use super::{parse_json, ApiJson};
use crate::auth::{AdminSession, Session};
use crate::error::{ApiError, ApiOk, ApiResult};
use crate::fragments::{self, ModuleUpdate};
use crate::AppState;

/// Per-instance data a client needs to mount a module.
#[derive(Serialize)]
pub struct ModuleBootstrap {
    descriptor_id: DescriptorId,
    title: Option<String>,
    kind: Option<WidgetKind>,
    refresh_s: Option<u32>,
    handlers: BTreeMap<LifecycleEvent, String>,
}

#[derive(Serialize)]
pub struct LayoutView {
    #[serde(flatten)]
    layout: DashboardLayout,
    modules: BTreeMap<InstanceId, ModuleBootstrap>,
}

fn layout_view(state: &AppState, layout: DashboardLayout) -> LayoutView {
    let registry = &state.platform.registry;
    let modules = layout
        .instances()
        .map(|w| {
            let desc = registry.descriptor(&w.descriptor_id);
            (
                w.instance_id.clone(),
                ModuleBootstrap {
                    descriptor_id: w.descriptor_id.clone(),
                    title: desc.as_ref().map(|d| d.title.clone()),
                    kind: desc.as_ref().map(|d| d.kind),
                    refresh_s: desc.as_ref().map(|d| d.default_refresh_s),
                    handlers: registry.handlers(&w.descriptor_id),
                },
            )
        })
        .collect();
    LayoutView { layout, modules }
}

pub async fn get_layout(State(state): State<AppState>, session: Session) -> ApiResult<LayoutView> {
    let layout = state.platform.layout.restore_on_connect(&session.account.user_id)?;
    Ok(ApiOk(layout_view(&state, layout)))
}

#[derive(Deserialize)]
pub struct OpBody {
    version: u64,
    #[serde(flatten)]
    op: LayoutOp,
}

#[derive(Serialize)]
pub struct OpView {
    #[serde(flatten)]
    outcome: OpOutcome,
    modules: BTreeMap<InstanceId, ModuleBootstrap>,
}

pub async fn apply_op(
    State(state): State<AppState>,
    session: Session,
    ApiJson(body): ApiJson<OpBody>,
) -> ApiResult<OpView> {
    let outcome = state
        .platform
        .layout
        .apply_op(&session.account.user_id, Some(body.version), body.op)?;
    let modules = layout_view(&state, outcome.layout.clone()).modules;
    Ok(ApiOk(OpView { outcome, modules }))
}

#[derive(Deserialize)]
pub struct CatalogQuery {
    kind: Option<String>,
}

pub async fn list_catalog(
    State(state): State<AppState>,
    _session: Session,
    Query(q): Query<CatalogQuery>,
) -> ApiResult<Vec<WidgetDescriptor>> {
    let kind = match q.kind.as_deref() {
        None | Some("") => None,
        Some(k) => Some(
            k.parse::<WidgetKind>()
                .map_err(|_| ApiError::bad_request(format!("unknown widget kind {k:?}")))?,
        ),
    };
    Ok(ApiOk(state.platform.registry.list_catalog(kind)))
}

#[derive(Deserialize)]
struct ManifestBody {
    manifest: String,
}

/// Accepts the manifest as the raw body, or as `{"manifest": "..."}`.
pub async fn upload_manifest(
    State(state): State<AppState>,
    _session: Session,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<WidgetDescriptor> {
    let is_json = headers
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let doc = if is_json {
        parse_json::<ManifestBody>(&body)?.manifest
    } else {
        String::from_utf8(body.to_vec()).map_err(|_| ApiError::bad_request("manifest must be UTF-8"))?
    };
    Ok(ApiOk(state.platform.registry.register_document(&doc)?))
}

#[derive(Deserialize)]
pub struct BindBody {
    event: String,
    handler_id: String,
}

pub async fn bind_handler(
    State(state): State<AppState>,
    _session: Session,
    Path(descriptor_id): Path<String>,
    ApiJson(body): ApiJson<BindBody>,
) -> ApiResult<BTreeMap<LifecycleEvent, String>> {
    let id = DescriptorId::from(descriptor_id);
    let registry = &state.platform.registry;
    registry.bind_lifecycle_handler(&id, &body.event, &body.handler_id)?;
    Ok(ApiOk(registry.handlers(&id)))
}

#[derive(Deserialize)]
pub struct UpdateQuery {
    since: Option<String>,
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum UpdateReply {
    Updated(ModuleUpdate),
    NotModified {
        instance_id: InstanceId,
        state_token: String,
    },
}

pub async fn module_update(
    State(state): State<AppState>,
    session: Session,
    Path(instance_id): Path<String>,
    Query(q): Query<UpdateQuery>,
) -> ApiResult<UpdateReply> {
    let uid = &session.account.user_id;
    let instance = state
        .platform
        .layout
        .find_instance(uid, &InstanceId::from(instance_id))?;
    let update = fragments::module_update(&state.platform, &session.account, &instance).await?;
    if q.since.as_deref() == Some(update.state_token.as_str()) {
        return Ok(ApiOk(UpdateReply::NotModified {
            instance_id: update.instance_id,
            state_token: update.state_token,
        }));
    }
    state
        .platform
        .registry
        .record_usage(&instance.descriptor_id, uid, UsageEvent::Viewed)
        .ok();
    Ok(ApiOk(UpdateReply::Updated(update)))
}

#[derive(Deserialize)]
pub struct PollBody {
    instances: Vec<InstanceId>,
    #[serde(default)]
    since_tokens: HashMap<InstanceId, String>,
    wait_s: Option<u64>,
}

#[derive(Serialize)]
pub struct PollReply {
    updates: Vec<ModuleUpdate>,
}

/// Returns the modules whose token differs from `since_tokens`, waiting up
/// to `wait_s` for the first change. Unknown instances fail the batch.
pub async fn poll(
    State(state): State<AppState>,
    session: Session,
    ApiJson(body): ApiJson<PollBody>,
) -> ApiResult<PollReply> {
    let uid = &session.account.user_id;
    let layout = state.platform.layout.restore_on_connect(uid)?;
    for id in &body.instances {
        if layout.find_instance(id).is_none() {
            return Err(dashgate_core::layout::LayoutError::UnknownInstance(id.clone()).into());
        }
    }
    let mut ids = body.instances;
    ids.sort();
    ids.dedup();

    let wait = body.wait_s.unwrap_or(state.poll.wait_s).min(state.poll.max_wait_s);
    let deadline = Instant::now() + Duration::from_secs(wait);
    let mut changes = state.changes.subscribe();
    loop {
        changes.borrow_and_update();
        let layout = state.platform.layout.restore_on_connect(uid)?;
        let mut updates = Vec::new();
        for id in &ids {
            // Removed mid-poll; nothing to report for it.
            let Some(instance) = layout.find_instance(id) else { continue };
            let update = fragments::module_update(&state.platform, &session.account, instance).await?;
            if body.since_tokens.get(id) != Some(&update.state_token) {
                state
                    .platform
                    .registry
                    .record_usage(&instance.descriptor_id, uid, UsageEvent::Viewed)
                    .ok();
                updates.push(update);
            }
        }
        let now = Instant::now();
        if !updates.is_empty() || now >= deadline {
            return Ok(ApiOk(PollReply { updates }));
        }
        // Feeds change without any request, so re-check at least once a second.
        let tick = (deadline - now).min(Duration::from_secs(1));
        tokio::select! {
            _ = state.shutdown.cancelled() => return Ok(ApiOk(PollReply { updates: Vec::new() })),
            _ = changes.changed() => {}
            _ = tokio::time::sleep(tick) => {}
        }
    }
}

pub async fn usage_report(
    State(state): State<AppState>,
    _admin: AdminSession,
) -> ApiResult<BTreeMap<DescriptorId, UsageCounts>> {
    Ok(ApiOk(state.platform.registry.usage_report()))
}

