//! Per-module markup fragments.
//!
//! A fragment depends only on the data its module shows, so its digest
//! works as a change token: equal data gives an equal token, and one
//! module's mutation cannot move another module's token.

use std::fmt::Write;

use chrono::{DateTime, SecondsFormat, Utc};
use dashgate_core::feeds::{escape_html as esc, merge_feeds, render_module_block, FeedFormat, FeedSource, MergePolicy};
use dashgate_core::identity::UserAccount;
use dashgate_core::layout::WidgetInstance;
use dashgate_core::proxy::canonical_proxy_url;
use dashgate_core::registry::{Enabler, WidgetDescriptor, WidgetKind};
use dashgate_core::telecom::{CallState, PresenceState};
use dashgate_core::{InstanceId, Platform};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::ApiError;

/// Calls shown under the speed-dial list.
const RECENT_CALLS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModuleUpdate {
    pub instance_id: InstanceId,
    pub fragment: String,
    pub state_token: String,
    pub produced_at: DateTime<Utc>,
}

pub fn state_token(fragment: &str) -> String {
    hex::encode(Sha256::digest(fragment.as_bytes()))
}

fn ts(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub async fn module_update(
    platform: &Platform,
    user: &UserAccount,
    instance: &WidgetInstance,
) -> Result<ModuleUpdate, ApiError> {
    let fragment = render(platform, user, instance).await?;
    Ok(ModuleUpdate {
        instance_id: instance.instance_id.clone(),
        state_token: state_token(&fragment),
        fragment,
        produced_at: platform.clock.now(),
    })
}

pub async fn render(
    platform: &Platform,
    user: &UserAccount,
    instance: &WidgetInstance,
) -> Result<String, ApiError> {
    let id = esc(instance.instance_id.as_str());
    let Some(desc) = platform.registry.descriptor(&instance.descriptor_id) else {
        return Ok(format!(
            "<div class=\"module missing\" data-module=\"{id}\">Widget no longer available</div>"
        ));
    };
    match desc.kind {
        WidgetKind::TelecomEnabler => match desc.enabler() {
            Some(e) => enabler(platform, user, &id, e),
            None => Ok(format!(
                "<div class=\"module missing\" data-module=\"{id}\">Unsupported enabler</div>"
            )),
        },
        WidgetKind::Feed => Ok(feed(platform, instance, &desc).await),
        WidgetKind::ProxiedPage => proxied(platform, user, instance, &desc),
    }
}

fn enabler(platform: &Platform, user: &UserAccount, id: &str, e: Enabler) -> Result<String, ApiError> {
    let telecom = &platform.telecom;
    let uid = &user.user_id;
    let mut out = format!("<div class=\"module {}\" data-module=\"{id}\">", e.as_str());
    match e {
        Enabler::Profile => {
            let acc = platform.identity.account(uid)?.unwrap_or_else(|| user.clone());
            let _ = write!(
                out,
                "<h3 class=\"display-name\">{}</h3><p class=\"username\">{}</p>",
                esc(&acc.display_name),
                esc(&acc.username)
            );
        }
        Enabler::SpeedDial => {
            let mut contacts = telecom.contacts(uid)?;
            contacts.sort_by(|a, b| {
                (a.speed_dial_slot.is_none(), a.speed_dial_slot, &a.display_name, &a.contact_id).cmp(&(
                    b.speed_dial_slot.is_none(),
                    b.speed_dial_slot,
                    &b.display_name,
                    &b.contact_id,
                ))
            });
            out.push_str("<ul class=\"contacts\">");
            for c in &contacts {
                let slot = c.speed_dial_slot.map(|s| s.to_string()).unwrap_or_default();
                let _ = write!(
                    out,
                    "<li data-contact=\"{}\" data-slot=\"{slot}\"><span class=\"slot\">{slot}</span> {} <span class=\"address\">{}</span></li>",
                    esc(c.contact_id.as_str()),
                    esc(&c.display_name),
                    esc(&c.address)
                );
            }
            out.push_str("</ul><ul class=\"calls\">");
            for call in telecom.list_calls(uid).into_iter().take(RECENT_CALLS) {
                let dir = if &call.caller == uid { "out" } else { "in" };
                let reason = call
                    .terminal_reason
                    .and_then(|r| serde_json::to_value(r).ok())
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default();
                let _ = write!(
                    out,
                    "<li data-call=\"{}\" data-state=\"{}\" data-direction=\"{dir}\" data-reason=\"{reason}\">{} <time datetime=\"{}\"></time></li>",
                    esc(call.call_id.as_str()),
                    call_state(call.state),
                    esc(&call.callee_address),
                    ts(&call.last_transition_at)
                );
            }
            out.push_str("</ul>");
        }
        Enabler::Presence => {
            let p = telecom.get_presence(uid, uid)?;
            let state = match p.state {
                PresenceState::Available => "available",
                PresenceState::Busy => "busy",
                PresenceState::Away => "away",
                PresenceState::Offline => "offline",
            };
            let _ = write!(out, "<p class=\"presence\" data-state=\"{state}\">{state}</p>");
            if let Some(note) = &p.note {
                let _ = write!(out, "<p class=\"note\">{}</p>", esc(note));
            }
        }
        Enabler::Im => {
            let inbox = telecom.list_im(uid)?;
            let unread = inbox.iter().filter(|m| !m.read).count();
            let _ = write!(out, "<p class=\"unread\" data-unread=\"{unread}\">{unread} unread</p><ul>");
            for m in &inbox {
                let _ = write!(
                    out,
                    "<li data-message=\"{}\" class=\"{}\"><b>{}</b> {} <time datetime=\"{}\"></time></li>",
                    esc(m.message_id.as_str()),
                    if m.read { "read" } else { "unread" },
                    esc(&m.from),
                    esc(&m.body),
                    ts(&m.sent_at)
                );
            }
            out.push_str("</ul>");
        }
        Enabler::Voicemail => {
            let inbox = telecom.list_voicemail(uid)?;
            let unread = inbox.iter().filter(|m| !m.read).count();
            let _ = write!(out, "<p class=\"unread\" data-unread=\"{unread}\">{unread} unread</p><ul>");
            for m in &inbox {
                let _ = write!(
                    out,
                    "<li data-message=\"{}\" class=\"{}\" data-payload=\"{}\"><b>{}</b> <time datetime=\"{}\"></time></li>",
                    esc(m.message_id.as_str()),
                    if m.read { "read" } else { "unread" },
                    esc(&m.payload_ref),
                    esc(&m.from),
                    ts(&m.sent_at)
                );
            }
            out.push_str("</ul>");
        }
    }
    out.push_str("</div>");
    Ok(out)
}

fn call_state(s: CallState) -> &'static str {
    match s {
        CallState::Idle => "idle",
        CallState::Inviting => "inviting",
        CallState::Ringing => "ringing",
        CallState::Active => "active",
        CallState::Terminated => "terminated",
    }
}

/// Feed widgets read `url` (one or more whitespace-separated sources),
/// `refresh_s` and `max_items` from the instance config, falling back to
/// the descriptor.
async fn feed(platform: &Platform, instance: &WidgetInstance, desc: &WidgetDescriptor) -> String {
    let urls: Vec<&str> = match instance.config.get("url") {
        Some(u) if !u.trim().is_empty() => u.split_whitespace().collect(),
        _ => vec![desc.source.as_str()],
    };
    let refresh_s = instance
        .config
        .get("refresh_s")
        .and_then(|v| v.parse().ok())
        .unwrap_or(desc.default_refresh_s);
    let max_items = instance
        .config
        .get("max_items")
        .and_then(|v| v.parse().ok())
        .unwrap_or(MergePolicy::default().max_items);

    let mut lists = Vec::with_capacity(urls.len());
    let mut stale = false;
    for url in urls {
        let fetch = platform
            .feeds
            .fetch_with_refresh(&FeedSource {
                url: url.to_owned(),
                declared_kind: FeedFormat::Auto,
                refresh_s,
            })
            .await;
        stale |= fetch.stale;
        lists.push(fetch.items);
    }
    let items = merge_feeds(&lists, MergePolicy { max_items });
    let block = render_module_block(&items, &instance.config, platform.proxy.rule(), &instance.instance_id);
    format!(
        "<div class=\"module feed\" data-module=\"{}\" data-stale=\"{stale}\">{block}</div>",
        esc(instance.instance_id.as_str())
    )
}

fn proxied(
    platform: &Platform,
    user: &UserAccount,
    instance: &WidgetInstance,
    desc: &WidgetDescriptor,
) -> Result<String, ApiError> {
    let id = esc(instance.instance_id.as_str());
    let src = canonical_proxy_url(platform.proxy.rule(), &desc.source, &instance.instance_id)?;
    let mut out = format!("<div class=\"module proxied\" data-module=\"{id}\"");
    if desc.third_party {
        if let Some(key) = &desc.service_key {
            if !platform.identity.has_service_identity(&user.user_id, key)? {
                let _ = write!(out, " data-credential-required=\"{}\"", esc(key));
            }
        }
    }
    let _ = write!(
        out,
        "><iframe src=\"{}\" title=\"{}\"></iframe></div>",
        esc(&src),
        esc(&desc.title)
    );
    Ok(out)
}
