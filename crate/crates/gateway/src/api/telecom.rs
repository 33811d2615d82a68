use axum::extract::{Path, State};
use dashgate_core::telecom::{
    CallEvent, CallSession, CallTarget, Contact, ContactDraft, InstantMessage, PresenceState, PresenceStatus,
    TelecomError, VoiceMessage,
};
use dashgate_core::{CallId, ContactId, InstanceId, MessageId};
use serde::{Deserialize, Serialize};

use super::ApiJson;
use crate::auth::Session;
use crate::error::{ApiError, ApiOk, ApiResult};
use crate::AppState;

#[derive(Serialize)]
pub struct Removed {
    removed: ContactId,
}

pub async fn list_contacts(State(state): State<AppState>, session: Session) -> ApiResult<Vec<Contact>> {
    Ok(ApiOk(state.platform.telecom.contacts(&session.account.user_id)?))
}

pub async fn upsert_contact(
    State(state): State<AppState>,
    session: Session,
    ApiJson(draft): ApiJson<ContactDraft>,
) -> ApiResult<Contact> {
    Ok(ApiOk(state.platform.telecom.upsert_contact(&session.account.user_id, draft)?))
}

pub async fn remove_contact(
    State(state): State<AppState>,
    session: Session,
    Path(id): Path<String>,
) -> ApiResult<Removed> {
    let id = ContactId::from(id);
    state.platform.telecom.remove_contact(&session.account.user_id, &id)?;
    Ok(ApiOk(Removed { removed: id }))
}

#[derive(Deserialize)]
pub struct ImportBody {
    instance_id: InstanceId,
    display_name: String,
    address: String,
}

pub async fn import_contact(
    State(state): State<AppState>,
    session: Session,
    ApiJson(body): ApiJson<ImportBody>,
) -> ApiResult<Contact> {
    Ok(ApiOk(state.platform.telecom.import_contact_from_module(
        &session.account.user_id,
        &body.instance_id,
        &body.display_name,
        &body.address,
    )?))
}

/// Exactly one of the three targets.
#[derive(Deserialize)]
pub struct CallBody {
    to: Option<String>,
    contact_id: Option<ContactId>,
    slot: Option<u32>,
}

pub async fn place_call(
    State(state): State<AppState>,
    session: Session,
    ApiJson(body): ApiJson<CallBody>,
) -> ApiResult<CallSession> {
    let target = match (body.to, body.contact_id, body.slot) {
        (Some(a), None, None) => CallTarget::Address(a),
        (None, Some(c), None) => CallTarget::Contact(c),
        (None, None, Some(s)) => CallTarget::Slot(s),
        _ => return Err(ApiError::bad_request("give exactly one of to, contact_id, slot")),
    };
    Ok(ApiOk(state.platform.telecom.place_call(&session.account.user_id, target)?))
}

pub async fn list_calls(State(state): State<AppState>, session: Session) -> ApiResult<Vec<CallSession>> {
    Ok(ApiOk(state.platform.telecom.list_calls(&session.account.user_id)))
}

pub async fn get_call(
    State(state): State<AppState>,
    session: Session,
    Path(id): Path<String>,
) -> ApiResult<CallSession> {
    Ok(ApiOk(state.platform.telecom.call(&session.account.user_id, &CallId::from(id))?))
}

#[derive(Deserialize)]
pub struct EventBody {
    event: CallEvent,
}

pub async fn call_event(
    State(state): State<AppState>,
    session: Session,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<EventBody>,
) -> ApiResult<CallSession> {
    Ok(ApiOk(state.platform.telecom.transition_call(
        &session.account.user_id,
        &CallId::from(id),
        body.event,
    )?))
}

#[derive(Deserialize)]
pub struct PresenceBody {
    state: PresenceState,
    #[serde(default)]
    note: Option<String>,
}

pub async fn set_presence(
    State(state): State<AppState>,
    session: Session,
    ApiJson(body): ApiJson<PresenceBody>,
) -> ApiResult<PresenceStatus> {
    Ok(ApiOk(state.platform.telecom.set_presence(
        &session.account.user_id,
        body.state,
        body.note,
    )?))
}

pub async fn own_presence(State(state): State<AppState>, session: Session) -> ApiResult<PresenceStatus> {
    let uid = &session.account.user_id;
    Ok(ApiOk(state.platform.telecom.get_presence(uid, uid)?))
}

pub async fn presence_of(
    State(state): State<AppState>,
    session: Session,
    Path(username): Path<String>,
) -> ApiResult<PresenceStatus> {
    let subject = state
        .platform
        .identity
        .find_by_username(&username)?
        .ok_or(TelecomError::UnknownUser)?;
    Ok(ApiOk(state.platform.telecom.get_presence(&session.account.user_id, &subject.user_id)?))
}

#[derive(Deserialize)]
pub struct ImBody {
    to: String,
    body: String,
}

pub async fn send_im(
    State(state): State<AppState>,
    session: Session,
    ApiJson(body): ApiJson<ImBody>,
) -> ApiResult<InstantMessage> {
    Ok(ApiOk(state.platform.telecom.send_im(&session.account.user_id, &body.to, &body.body)?))
}

pub async fn list_im(State(state): State<AppState>, session: Session) -> ApiResult<Vec<InstantMessage>> {
    Ok(ApiOk(state.platform.telecom.list_im(&session.account.user_id)?))
}

pub async fn read_im(
    State(state): State<AppState>,
    session: Session,
    Path(id): Path<String>,
) -> ApiResult<InstantMessage> {
    Ok(ApiOk(state.platform.telecom.mark_im_read(&session.account.user_id, &MessageId::from(id))?))
}

#[derive(Deserialize)]
pub struct VoicemailBody {
    to: String,
    payload_ref: String,
}

/// Leaves a voice message; the sender is the session user.
pub async fn deposit_voicemail(
    State(state): State<AppState>,
    session: Session,
    ApiJson(body): ApiJson<VoicemailBody>,
) -> ApiResult<VoiceMessage> {
    if body.payload_ref.trim().is_empty() {
        return Err(TelecomError::EmptyMessage.into());
    }
    Ok(ApiOk(state.platform.telecom.deposit_voice_message(
        &body.to,
        &session.account.username,
        &body.payload_ref,
    )?))
}

pub async fn list_voicemail(State(state): State<AppState>, session: Session) -> ApiResult<Vec<VoiceMessage>> {
    Ok(ApiOk(state.platform.telecom.list_voicemail(&session.account.user_id)?))
}

pub async fn read_voicemail(
    State(state): State<AppState>,
    session: Session,
    Path(id): Path<String>,
) -> ApiResult<VoiceMessage> {
    Ok(ApiOk(state.platform.telecom.mark_voicemail_read(
        &session.account.user_id,
        &MessageId::from(id),
    )?))
}
