//! Simulated NGN enablers: contact directory with speed dial, presence,
//! instant messages, voice mail and call sessions.
//!
//! Addresses are either a registered username (`bob`, `bob@<local_domain>`,
//! optionally prefixed `sip:`), a configured simulated endpoint, or an
//! arbitrary tel/user@domain string that can be stored in the directory but
//! resolves to nobody.

mod call;

pub use call::{next_state, CallEvent, CallState, TerminalReason};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use dashmap::DashMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::config::{SimulatedEndpoint, TelecomConfig};
use crate::identity::{IdentityError, IdentityService, UserAccount};
use crate::ids::{CallId, ContactId, InstanceId, MessageId, UserId};
use crate::layout::{LayoutError, LayoutService};
use crate::registry::{RegistryError, UsageEvent, WidgetRegistry};
use crate::store::{keys, Store, StoreError, StoreExt};

pub const MAX_NOTE_CHARS: usize = 140;

#[derive(Debug, thiserror::Error)]
pub enum TelecomError {
    #[error("speed dial slot {0} is already taken")]
    SlotTaken(u32),
    #[error("speed dial slots start at 1")]
    InvalidSlot,
    #[error("invalid address {0:?}")]
    InvalidAddress(String),
    #[error("display name must not be empty")]
    InvalidName,
    #[error("unknown contact")]
    UnknownContact,
    #[error("unknown widget instance {0}")]
    UnknownInstance(InstanceId),
    #[error("unknown call {0}")]
    UnknownCall(CallId),
    #[error("event {event} is not allowed in state {state:?}")]
    IllegalTransition { state: CallState, event: CallEvent },
    #[error("unknown recipient {0:?}")]
    UnknownRecipient(String),
    #[error("unknown message {0}")]
    UnknownMessage(MessageId),
    #[error("unknown user")]
    UnknownUser,
    #[error("presence note longer than {MAX_NOTE_CHARS} characters")]
    NoteTooLong,
    #[error("message body must not be empty")]
    EmptyMessage,
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Layout(LayoutError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<LayoutError> for TelecomError {
    fn from(e: LayoutError) -> Self {
        match e {
            LayoutError::UnknownInstance(id) => TelecomError::UnknownInstance(id),
            LayoutError::UnknownUser(_) => TelecomError::UnknownUser,
            other => TelecomError::Layout(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactOrigin {
    Manual,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contact {
    pub contact_id: ContactId,
    pub owner: UserId,
    pub display_name: String,
    pub address: String,
    pub speed_dial_slot: Option<u32>,
    pub origin: ContactOrigin,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactDraft {
    /// Updates this contact when set; creates a new one otherwise.
    #[serde(default)]
    pub contact_id: Option<ContactId>,
    pub display_name: String,
    pub address: String,
    #[serde(default)]
    pub speed_dial_slot: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresenceState {
    Available,
    Busy,
    Away,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceStatus {
    pub user_id: UserId,
    pub state: PresenceState,
    pub note: Option<String>,
    pub updated_at: Option<DateTime<Utc>>,
    /// Global commit order of presence updates.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSession {
    pub call_id: CallId,
    pub caller: UserId,
    pub callee_address: String,
    pub callee_user: Option<UserId>,
    pub state: CallState,
    pub terminal_reason: Option<TerminalReason>,
    pub started_at: DateTime<Utc>,
    pub last_transition_at: DateTime<Utc>,
    /// Every state the call has been in, in order.
    pub history: Vec<CallState>,
}

impl CallSession {
    fn involves(&self, user: &UserId) -> bool {
        &self.caller == user || self.callee_user.as_ref() == Some(user)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallTarget {
    Address(String),
    Contact(ContactId),
    Slot(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstantMessage {
    pub message_id: MessageId,
    pub from: String,
    pub to: String,
    pub body: String,
    pub sent_at: DateTime<Utc>,
    pub read: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoiceMessage {
    pub message_id: MessageId,
    pub from: String,
    pub to: String,
    /// Opaque reference to the recorded payload.
    pub payload_ref: String,
    pub sent_at: DateTime<Utc>,
    pub read: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mailbox {
    Im,
    Voicemail,
}

trait MailItem: Clone + Serialize + serde::de::DeserializeOwned {
    fn id(&self) -> &MessageId;
    fn mark_read(&mut self);
}

impl MailItem for InstantMessage {
    fn id(&self) -> &MessageId {
        &self.message_id
    }
    fn mark_read(&mut self) {
        self.read = true;
    }
}

impl MailItem for VoiceMessage {
    fn id(&self) -> &MessageId {
        &self.message_id
    }
    fn mark_read(&mut self) {
        self.read = true;
    }
}

pub fn valid_address(address: &str) -> bool {
    let a = address.trim();
    if a.is_empty() || a.len() > 256 || a.len() != address.len() {
        return false;
    }
    let a = a
        .strip_prefix("sip:")
        .or_else(|| a.strip_prefix("tel:"))
        .unwrap_or(a);
    let is_tel = {
        let digits = a.strip_prefix('+').unwrap_or(a);
        digits.starts_with(|c: char| c.is_ascii_digit())
            && digits
                .chars()
                .all(|c| c.is_ascii_digit() || matches!(c, '-' | '.' | '(' | ')'))
    };
    if is_tel {
        return true;
    }
    let local_ok = |s: &str| {
        !s.is_empty()
            && s.chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-' | '+' | '%'))
    };
    match a.split_once('@') {
        Some((local, domain)) => {
            local_ok(local)
                && !domain.is_empty()
                && domain
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-'))
        }
        None => local_ok(a),
    }
}

enum Callee {
    User(UserAccount),
    Simulated(SimulatedEndpoint),
    Nobody,
}

pub struct TelecomService {
    store: Arc<dyn Store>,
    clock: Arc<dyn Clock>,
    config: TelecomConfig,
    identity: Arc<IdentityService>,
    layout: Arc<LayoutService>,
    registry: Arc<WidgetRegistry>,
    user_locks: DashMap<UserId, Arc<Mutex<()>>>,
    calls: DashMap<CallId, Arc<Mutex<CallSession>>>,
    presence_seq: AtomicU64,
    presence_commit: Mutex<()>,
}

impl TelecomService {
    pub fn open(
        store: Arc<dyn Store>,
        clock: Arc<dyn Clock>,
        config: TelecomConfig,
        identity: Arc<IdentityService>,
        layout: Arc<LayoutService>,
        registry: Arc<WidgetRegistry>,
    ) -> Result<Self, TelecomError> {
        let calls = DashMap::new();
        for key in store.keys(keys::CALL_PREFIX)? {
            if let Some(call) = store.get_json::<CallSession>(&key)? {
                calls.insert(call.call_id.clone(), Arc::new(Mutex::new(call)));
            }
        }
        let mut max_seq = 0;
        for key in store.keys("telecom/")? {
            if key.ends_with("/presence") {
                if let Some(p) = store.get_json::<PresenceStatus>(&key)? {
                    max_seq = max_seq.max(p.seq);
                }
            }
        }
        Ok(TelecomService {
            store,
            clock,
            config,
            identity,
            layout,
            registry,
            user_locks: DashMap::new(),
            calls,
            presence_seq: AtomicU64::new(max_seq),
            presence_commit: Mutex::new(()),
        })
    }

    fn lock_for(&self, user: &UserId) -> Arc<Mutex<()>> {
        self.user_locks.entry(user.clone()).or_default().clone()
    }

    fn account(&self, user: &UserId) -> Result<UserAccount, TelecomError> {
        self.identity.account(user)?.ok_or(TelecomError::UnknownUser)
    }

    /// The registered user an address refers to, if any.
    pub fn resolve_user(&self, address: &str) -> Result<Option<UserAccount>, TelecomError> {
        let a = address.trim();
        let a = a.strip_prefix("sip:").unwrap_or(a);
        let name = match a.split_once('@') {
            Some((local, domain)) if domain.eq_ignore_ascii_case(&self.config.local_domain) => local,
            Some(_) => return Ok(None),
            None => a,
        };
        Ok(self.identity.find_by_username(name)?)
    }

    fn resolve_callee(&self, address: &str) -> Result<Callee, TelecomError> {
        if let Some(user) = self.resolve_user(address)? {
            return Ok(Callee::User(user));
        }
        let normalized = address.trim().strip_prefix("sip:").unwrap_or(address.trim());
        Ok(self
            .config
            .simulated_endpoints
            .iter()
            .find(|e| e.address.eq_ignore_ascii_case(normalized))
            .cloned()
            .map_or(Callee::Nobody, Callee::Simulated))
    }

    // --- directory ---------------------------------------------------------

    pub fn contacts(&self, user: &UserId) -> Result<Vec<Contact>, TelecomError> {
        Ok(self.store.get_json(&keys::contacts(user))?.unwrap_or_default())
    }

    fn save_contact(&self, user: &UserId, draft: ContactDraft, origin: ContactOrigin) -> Result<Contact, TelecomError> {
        if draft.display_name.trim().is_empty() {
            return Err(TelecomError::InvalidName);
        }
        if !valid_address(&draft.address) {
            return Err(TelecomError::InvalidAddress(draft.address));
        }
        if draft.speed_dial_slot == Some(0) {
            return Err(TelecomError::InvalidSlot);
        }
        let lock = self.lock_for(user);
        let _g = lock.lock();
        let mut contacts = self.contacts(user)?;
        if let Some(slot) = draft.speed_dial_slot {
            let taken = contacts
                .iter()
                .any(|c| c.speed_dial_slot == Some(slot) && Some(&c.contact_id) != draft.contact_id.as_ref());
            if taken {
                return Err(TelecomError::SlotTaken(slot));
            }
        }
        let contact = match draft.contact_id {
            Some(id) => {
                let existing = contacts
                    .iter_mut()
                    .find(|c| c.contact_id == id)
                    .ok_or(TelecomError::UnknownContact)?;
                existing.display_name = draft.display_name;
                existing.address = draft.address;
                existing.speed_dial_slot = draft.speed_dial_slot;
                existing.clone()
            }
            None => {
                let c = Contact {
                    contact_id: ContactId::generate(),
                    owner: user.clone(),
                    display_name: draft.display_name,
                    address: draft.address,
                    speed_dial_slot: draft.speed_dial_slot,
                    origin,
                };
                contacts.push(c.clone());
                c
            }
        };
        self.store.put_json(&keys::contacts(user), &contacts)?;
        Ok(contact)
    }

    pub fn upsert_contact(&self, user: &UserId, draft: ContactDraft) -> Result<Contact, TelecomError> {
        self.save_contact(user, draft, ContactOrigin::Manual)
    }

    pub fn remove_contact(&self, user: &UserId, id: &ContactId) -> Result<(), TelecomError> {
        let lock = self.lock_for(user);
        let _g = lock.lock();
        let mut contacts = self.contacts(user)?;
        let before = contacts.len();
        contacts.retain(|c| &c.contact_id != id);
        if contacts.len() == before {
            return Err(TelecomError::UnknownContact);
        }
        self.store.put_json(&keys::contacts(user), &contacts)?;
        Ok(())
    }

    /// Adds a contact picked out of another widget's content.
    pub fn import_contact_from_module(
        &self,
        user: &UserId,
        source: &InstanceId,
        display_name: &str,
        address: &str,
    ) -> Result<Contact, TelecomError> {
        let instance = self.layout.find_instance(user, source)?;
        let contact = self.save_contact(
            user,
            ContactDraft {
                contact_id: None,
                display_name: display_name.to_owned(),
                address: address.to_owned(),
                speed_dial_slot: None,
            },
            ContactOrigin::Imported,
        )?;
        self.registry
            .record_usage(&instance.descriptor_id, user, UsageEvent::Viewed)?;
        Ok(contact)
    }

    // --- presence ----------------------------------------------------------

    pub fn set_presence(
        &self,
        user: &UserId,
        state: PresenceState,
        note: Option<String>,
    ) -> Result<PresenceStatus, TelecomError> {
        if note.as_ref().is_some_and(|n| n.chars().count() > MAX_NOTE_CHARS) {
            return Err(TelecomError::NoteTooLong);
        }
        // Sequence assignment and write happen together so the stored
        // status is always the one with the highest sequence.
        let _g = self.presence_commit.lock();
        let status = PresenceStatus {
            user_id: user.clone(),
            state,
            note,
            updated_at: Some(self.clock.now()),
            seq: self.presence_seq.fetch_add(1, Ordering::SeqCst) + 1,
        };
        self.store.put_json(&keys::presence(user), &status)?;
        Ok(status)
    }

    pub fn get_presence(&self, _viewer: &UserId, subject: &UserId) -> Result<PresenceStatus, TelecomError> {
        Ok(self
            .store
            .get_json(&keys::presence(subject))?
            .unwrap_or(PresenceStatus {
                user_id: subject.clone(),
                state: PresenceState::Offline,
                note: None,
                updated_at: None,
                seq: 0,
            }))
    }

    // --- calls -------------------------------------------------------------

    fn persist_call(&self, call: &CallSession) -> Result<(), TelecomError> {
        self.store.put_json(&keys::call(&call.call_id), call)?;
        Ok(())
    }

    pub fn place_call(&self, user: &UserId, target: CallTarget) -> Result<CallSession, TelecomError> {
        let caller = self.account(user)?;
        let address = match target {
            CallTarget::Address(a) => {
                if !valid_address(&a) {
                    return Err(TelecomError::InvalidAddress(a));
                }
                a
            }
            CallTarget::Contact(id) => self
                .contacts(user)?
                .into_iter()
                .find(|c| c.contact_id == id)
                .ok_or(TelecomError::UnknownContact)?
                .address,
            CallTarget::Slot(slot) => self
                .contacts(user)?
                .into_iter()
                .find(|c| c.speed_dial_slot == Some(slot))
                .ok_or(TelecomError::UnknownContact)?
                .address,
        };

        let now = self.clock.now();
        let callee = self.resolve_callee(&address)?;
        let mut call = CallSession {
            call_id: CallId::generate(),
            caller: caller.user_id.clone(),
            callee_address: address,
            callee_user: match &callee {
                Callee::User(u) => Some(u.user_id.clone()),
                _ => None,
            },
            state: CallState::Inviting,
            terminal_reason: None,
            started_at: now,
            last_transition_at: now,
            history: vec![CallState::Inviting],
        };
        match &callee {
            Callee::Nobody => {
                call.state = CallState::Terminated;
                call.terminal_reason = Some(TerminalReason::CalleeUnknown);
                call.history.push(CallState::Terminated);
            }
            Callee::User(_) => apply_edge(&mut call, CallEvent::Ring, now)?,
            Callee::Simulated(ep) => {
                apply_edge(&mut call, CallEvent::Ring, now)?;
                if ep.auto_answer {
                    apply_edge(&mut call, CallEvent::Answer, now)?;
                }
            }
        }
        self.persist_call(&call)?;
        self.calls
            .insert(call.call_id.clone(), Arc::new(Mutex::new(call.clone())));
        Ok(call)
    }

    pub fn call(&self, user: &UserId, id: &CallId) -> Result<CallSession, TelecomError> {
        let slot = self
            .calls
            .get(id)
            .map(|c| c.clone())
            .ok_or_else(|| TelecomError::UnknownCall(id.clone()))?;
        let call = slot.lock().clone();
        if call.involves(user) {
            Ok(call)
        } else {
            Err(TelecomError::UnknownCall(id.clone()))
        }
    }

    /// Calls the user placed or received, newest first.
    pub fn list_calls(&self, user: &UserId) -> Vec<CallSession> {
        let mut out: Vec<CallSession> = self
            .calls
            .iter()
            .map(|e| e.value().lock().clone())
            .filter(|c| c.involves(user))
            .collect();
        out.sort_by(|a, b| {
            b.started_at
                .cmp(&a.started_at)
                .then_with(|| a.call_id.cmp(&b.call_id))
        });
        out
    }

    /// Advances a call the user takes part in.
    pub fn transition_call(&self, user: &UserId, id: &CallId, event: CallEvent) -> Result<CallSession, TelecomError> {
        let slot = self
            .calls
            .get(id)
            .map(|c| c.clone())
            .ok_or_else(|| TelecomError::UnknownCall(id.clone()))?;
        let mut call = slot.lock();
        if !call.involves(user) {
            return Err(TelecomError::UnknownCall(id.clone()));
        }
        self.advance(&mut call, event)?;
        Ok(call.clone())
    }

    fn advance(&self, call: &mut CallSession, event: CallEvent) -> Result<(), TelecomError> {
        let from = call.state;
        let mut next = call.clone();
        apply_edge(&mut next, event, self.clock.now())?;
        self.persist_call(&next)?;
        *call = next;
        if from == CallState::Ringing && event == CallEvent::Timeout {
            if let Some(callee) = call.callee_user.clone() {
                let caller = self.account(&call.caller)?;
                self.deposit_to_user(&callee, &caller.username, &format!("missed-call:{}", call.call_id))?;
            }
        }
        Ok(())
    }

    /// Times out calls left in Inviting or Ringing longer than the
    /// configured ring timeout. Returns the calls that changed.
    pub fn expire_calls(&self) -> Result<Vec<CallSession>, TelecomError> {
        let now = self.clock.now();
        let timeout = Duration::seconds(self.config.ring_timeout_s as i64);
        let slots: Vec<_> = self.calls.iter().map(|e| e.value().clone()).collect();
        let mut changed = Vec::new();
        for slot in slots {
            let mut call = slot.lock();
            if matches!(call.state, CallState::Inviting | CallState::Ringing)
                && now - call.last_transition_at >= timeout
            {
                self.advance(&mut call, CallEvent::Timeout)?;
                changed.push(call.clone());
            }
        }
        Ok(changed)
    }

    // --- mailboxes ---------------------------------------------------------

    fn mailbox_key(user: &UserId, mailbox: Mailbox) -> String {
        match mailbox {
            Mailbox::Im => keys::im_mailbox(user),
            Mailbox::Voicemail => keys::voice_mailbox(user),
        }
    }

    fn append<M: MailItem>(&self, user: &UserId, mailbox: Mailbox, msg: M) -> Result<M, TelecomError> {
        let lock = self.lock_for(user);
        let _g = lock.lock();
        let key = Self::mailbox_key(user, mailbox);
        let mut items: Vec<M> = self.store.get_json(&key)?.unwrap_or_default();
        items.push(msg.clone());
        self.store.put_json(&key, &items)?;
        Ok(msg)
    }

    fn list<M: MailItem>(&self, user: &UserId, mailbox: Mailbox) -> Result<Vec<M>, TelecomError> {
        let mut items: Vec<M> = self
            .store
            .get_json(&Self::mailbox_key(user, mailbox))?
            .unwrap_or_default();
        items.reverse();
        Ok(items)
    }

    fn mark<M: MailItem>(&self, user: &UserId, mailbox: Mailbox, id: &MessageId) -> Result<M, TelecomError> {
        let lock = self.lock_for(user);
        let _g = lock.lock();
        let key = Self::mailbox_key(user, mailbox);
        let mut items: Vec<M> = self.store.get_json(&key)?.unwrap_or_default();
        let item = items
            .iter_mut()
            .find(|m| m.id() == id)
            .ok_or_else(|| TelecomError::UnknownMessage(id.clone()))?;
        item.mark_read();
        let out = item.clone();
        self.store.put_json(&key, &items)?;
        Ok(out)
    }

    fn deposit_to_user(&self, to: &UserId, from: &str, payload_ref: &str) -> Result<VoiceMessage, TelecomError> {
        let to_account = self.account(to)?;
        let msg = VoiceMessage {
            message_id: MessageId::generate(),
            from: from.to_owned(),
            to: to_account.username,
            payload_ref: payload_ref.to_owned(),
            sent_at: self.clock.now(),
            read: false,
        };
        self.append(to, Mailbox::Voicemail, msg)
    }

    pub fn deposit_voice_message(&self, to_address: &str, from: &str, payload_ref: &str) -> Result<VoiceMessage, TelecomError> {
        let recipient = self
            .resolve_user(to_address)?
            .ok_or_else(|| TelecomError::UnknownRecipient(to_address.to_owned()))?;
        self.deposit_to_user(&recipient.user_id, from, payload_ref)
    }

    pub fn send_im(&self, from_user: &UserId, to_address: &str, body: &str) -> Result<InstantMessage, TelecomError> {
        if body.trim().is_empty() {
            return Err(TelecomError::EmptyMessage);
        }
        let sender = self.account(from_user)?;
        let recipient = self
            .resolve_user(to_address)?
            .ok_or_else(|| TelecomError::UnknownRecipient(to_address.to_owned()))?;
        let msg = InstantMessage {
            message_id: MessageId::generate(),
            from: sender.username,
            to: recipient.username.clone(),
            body: body.to_owned(),
            sent_at: self.clock.now(),
            read: false,
        };
        self.append(&recipient.user_id, Mailbox::Im, msg)
    }

    /// Inbox, newest first.
    pub fn list_im(&self, user: &UserId) -> Result<Vec<InstantMessage>, TelecomError> {
        self.list(user, Mailbox::Im)
    }

    pub fn list_voicemail(&self, user: &UserId) -> Result<Vec<VoiceMessage>, TelecomError> {
        self.list(user, Mailbox::Voicemail)
    }

    pub fn mark_im_read(&self, user: &UserId, id: &MessageId) -> Result<InstantMessage, TelecomError> {
        self.mark(user, Mailbox::Im, id)
    }

    pub fn mark_voicemail_read(&self, user: &UserId, id: &MessageId) -> Result<VoiceMessage, TelecomError> {
        self.mark(user, Mailbox::Voicemail, id)
    }
}

fn apply_edge(call: &mut CallSession, event: CallEvent, now: DateTime<Utc>) -> Result<(), TelecomError> {
    let (to, reason) = next_state(call.state, event).ok_or(TelecomError::IllegalTransition {
        state: call.state,
        event,
    })?;
    call.state = to;
    call.terminal_reason = reason;
    call.last_transition_at = now;
    call.history.push(to);
    Ok(())
}
