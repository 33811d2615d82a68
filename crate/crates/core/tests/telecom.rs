mod support {
    pub mod fixture;
}

use std::collections::BTreeMap;
use std::sync::Arc;

use dashgate_core::registry::{Enabler, UsageEvent};
use dashgate_core::telecom::{
    next_state, CallEvent, CallState, CallTarget, ContactDraft, ContactOrigin, PresenceState, TelecomError,
    TerminalReason,
};
use dashgate_core::{InstanceId, UserId};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use support::fixture;

fn draft(name: &str, address: &str, slot: Option<u32>) -> ContactDraft {
    ContactDraft {
        contact_id: None,
        display_name: name.to_owned(),
        address: address.to_owned(),
        speed_dial_slot: slot,
    }
}

// The legal edges, written out independently of the implementation.
const LEGAL: [(CallState, CallEvent, CallState); 8] = [
    (CallState::Inviting, CallEvent::Ring, CallState::Ringing),
    (CallState::Inviting, CallEvent::Cancel, CallState::Terminated),
    (CallState::Inviting, CallEvent::Timeout, CallState::Terminated),
    (CallState::Ringing, CallEvent::Answer, CallState::Active),
    (CallState::Ringing, CallEvent::Reject, CallState::Terminated),
    (CallState::Ringing, CallEvent::Cancel, CallState::Terminated),
    (CallState::Ringing, CallEvent::Timeout, CallState::Terminated),
    (CallState::Active, CallEvent::Hangup, CallState::Terminated),
];

fn legal_target(from: CallState, ev: CallEvent) -> Option<CallState> {
    LEGAL.iter().find(|(f, e, _)| *f == from && *e == ev).map(|t| t.2)
}

#[test]
fn twelve_speed_dial_slots() {
    let tp = fixture::platform();
    let u = tp.user("alice");
    for slot in 1..=12 {
        let c = tp
            .platform
            .telecom
            .upsert_contact(&u, draft(&format!("Friend {slot}"), &format!("friend{slot}@example.com"), Some(slot)))
            .unwrap();
        assert_eq!(c.speed_dial_slot, Some(slot));
    }
    let contacts = tp.platform.telecom.contacts(&u).unwrap();
    assert_eq!(contacts.iter().filter(|c| c.speed_dial_slot.is_some()).count(), 12);
    assert!(matches!(
        tp.platform.telecom.upsert_contact(&u, draft("Dup", "dup@example.com", Some(3))),
        Err(TelecomError::SlotTaken(3))
    ));
    assert!(matches!(
        tp.platform.telecom.upsert_contact(&u, draft("Empty", "", None)),
        Err(TelecomError::InvalidAddress(_))
    ));
}

#[test]
fn updating_a_contact_can_keep_its_slot() {
    let tp = fixture::platform();
    let u = tp.user("alice");
    let c = tp.platform.telecom.upsert_contact(&u, draft("Bob", "bob", Some(2))).unwrap();
    let mut edit = draft("Robert", "bob", Some(2));
    edit.contact_id = Some(c.contact_id.clone());
    let edited = tp.platform.telecom.upsert_contact(&u, edit).unwrap();
    assert_eq!(edited.contact_id, c.contact_id);
    assert_eq!(edited.display_name, "Robert");
    assert_eq!(tp.platform.telecom.contacts(&u).unwrap().len(), 1);
}

#[test]
fn import_from_own_module_only() {
    let tp = fixture::platform();
    let (a, b) = (tp.user("alice"), tp.user("bob"));
    let layout = tp.platform.layout.restore_on_connect(&a).unwrap();
    let news = tp
        .platform
        .registry
        .list_catalog(Some(dashgate_core::registry::WidgetKind::Feed))[0]
        .descriptor_id
        .clone();
    let inst = tp
        .platform
        .layout
        .add_widget(&a, &layout.tabs[0].tab_id, &news, BTreeMap::new())
        .unwrap();

    let c1 = tp
        .platform
        .telecom
        .import_contact_from_module(&a, &inst.instance_id, "Press desk", "desk@news.test")
        .unwrap();
    assert_eq!(c1.origin, ContactOrigin::Imported);
    let c2 = tp
        .platform
        .telecom
        .import_contact_from_module(&a, &inst.instance_id, "Press desk", "desk@news.test")
        .unwrap();
    assert_ne!(c1.contact_id, c2.contact_id);
    let viewed = tp
        .platform
        .registry
        .usage_log()
        .iter()
        .filter(|r| r.descriptor_id == news && r.event == UsageEvent::Viewed)
        .count();
    assert_eq!(viewed, 2);

    let err = tp
        .platform
        .telecom
        .import_contact_from_module(&b, &inst.instance_id, "X", "x@y.test")
        .unwrap_err();
    assert!(matches!(err, TelecomError::UnknownInstance(_)));
    assert!(tp.platform.telecom.contacts(&b).unwrap().is_empty());
    let err = tp
        .platform
        .telecom
        .import_contact_from_module(&a, &InstanceId::from("m-missing"), "X", "x@y.test")
        .unwrap_err();
    assert!(matches!(err, TelecomError::UnknownInstance(_)));
}

#[test]
fn presence_defaults_and_last_writer_wins() {
    let tp = Arc::new(fixture::platform());
    let (a, b) = (tp.user("alice"), tp.user("bob"));
    assert_eq!(tp.platform.telecom.get_presence(&b, &a).unwrap().state, PresenceState::Offline);
    tp.platform.telecom.set_presence(&a, PresenceState::Available, None).unwrap();
    assert_eq!(tp.platform.telecom.get_presence(&b, &a).unwrap().state, PresenceState::Available);

    let states = [PresenceState::Available, PresenceState::Busy, PresenceState::Away, PresenceState::Offline];
    let handles: Vec<_> = (0..2)
        .map(|session| {
            let tp = tp.clone();
            let a = a.clone();
            std::thread::spawn(move || {
                (0..50)
                    .map(|i| {
                        tp.platform
                            .telecom
                            .set_presence(&a, states[(i + session) % 4], Some(format!("s{session}-{i}")))
                            .unwrap()
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let mut committed: Vec<_> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    committed.sort_by_key(|s| s.seq);
    let seqs: Vec<u64> = committed.iter().map(|s| s.seq).collect();
    let mut dedup = seqs.clone();
    dedup.dedup();
    assert_eq!(seqs, dedup, "commit order is total");
    assert_eq!(&tp.platform.telecom.get_presence(&b, &a).unwrap(), committed.last().unwrap());

    let long = "x".repeat(141);
    assert!(matches!(
        tp.platform.telecom.set_presence(&a, PresenceState::Busy, Some(long)),
        Err(TelecomError::NoteTooLong)
    ));
}

#[test]
fn place_call_outcomes() {
    let tp = fixture::platform();
    let (a, b) = (tp.user("alice"), tp.user("bob"));
    let t = &tp.platform.telecom;

    let c = t.place_call(&a, CallTarget::Address("bob".into())).unwrap();
    assert_eq!(c.state, CallState::Ringing);
    assert_eq!(c.callee_user.as_ref(), Some(&b));
    assert_eq!(t.list_calls(&b).len(), 1);

    let c = t.place_call(&a, CallTarget::Address("sip:bob@dashboard.local".into())).unwrap();
    assert_eq!(c.state, CallState::Ringing);

    let c = t.place_call(&a, CallTarget::Address("nobody@nowhere".into())).unwrap();
    assert_eq!(c.state, CallState::Terminated);
    assert_eq!(c.terminal_reason, Some(TerminalReason::CalleeUnknown));

    let c = t.place_call(&a, CallTarget::Address("echo@sim.test".into())).unwrap();
    assert_eq!(c.state, CallState::Active);
    assert_eq!(c.history, [CallState::Inviting, CallState::Ringing, CallState::Active]);

    assert!(matches!(
        t.place_call(&a, CallTarget::Slot(4)),
        Err(TelecomError::UnknownContact)
    ));
}

#[test]
fn slot_call_equals_address_call() {
    let tp = fixture::platform();
    let a = tp.user("alice");
    tp.user("bob");
    let t = &tp.platform.telecom;
    for (slot, address) in [(11, "bob"), (12, "echo@sim.test"), (13, "nobody@nowhere")] {
        t.upsert_contact(&a, draft(address, address, Some(slot))).unwrap();
        let by_slot = t.place_call(&a, CallTarget::Slot(slot)).unwrap();
        let by_addr = t.place_call(&a, CallTarget::Address(address.into())).unwrap();
        assert_eq!(
            (&by_slot.state, &by_slot.terminal_reason, &by_slot.history, &by_slot.callee_user, &by_slot.callee_address),
            (&by_addr.state, &by_addr.terminal_reason, &by_addr.history, &by_addr.callee_user, &by_addr.callee_address),
        );
    }
}

#[test]
fn transition_table_all_thirty_cells() {
    let mut checked = 0;
    for s in CallState::ALL {
        for e in CallEvent::ALL {
            assert_eq!(next_state(s, e).map(|(to, _)| to), legal_target(s, e), "{s:?} + {e:?}");
            checked += 1;
        }
    }
    assert_eq!(checked, 30);
}

#[test]
fn service_rejects_illegal_events_without_change() {
    let tp = fixture::platform();
    let a = tp.user("alice");
    tp.user("bob");
    let t = &tp.platform.telecom;
    let call = t.place_call(&a, CallTarget::Address("bob".into())).unwrap();
    let err = t.transition_call(&a, &call.call_id, CallEvent::Hangup).unwrap_err();
    assert!(matches!(err, TelecomError::IllegalTransition { state: CallState::Ringing, event: CallEvent::Hangup }));
    assert_eq!(t.call(&a, &call.call_id).unwrap(), call);

    let active = t.transition_call(&a, &call.call_id, CallEvent::Answer).unwrap();
    assert_eq!(active.state, CallState::Active);
    let done = t.transition_call(&a, &call.call_id, CallEvent::Hangup).unwrap();
    assert_eq!(done.terminal_reason, Some(TerminalReason::AnsweredHangup));
    for e in CallEvent::ALL {
        assert!(t.transition_call(&a, &call.call_id, e).is_err());
    }
    assert_eq!(t.call(&a, &call.call_id).unwrap(), done);
}

#[test]
fn ten_thousand_random_sequences_stay_legal() {
    let tp = fixture::platform();
    let a = tp.user("alice");
    tp.user("bob");
    let t = &tp.platform.telecom;
    let targets = ["bob", "echo@sim.test", "nobody@nowhere"];
    let mut rng = StdRng::seed_from_u64(10_000);
    for trial in 0..10_000 {
        let call = t
            .place_call(&a, CallTarget::Address(targets[trial % 3].into()))
            .unwrap();
        let mut state = call.state;
        for _ in 0..rng.gen_range(1..8) {
            let e = CallEvent::ALL[rng.gen_range(0..6)];
            match t.transition_call(&a, &call.call_id, e) {
                Ok(c) => {
                    assert_eq!(Some(c.state), legal_target(state, e));
                    state = c.state;
                }
                Err(TelecomError::IllegalTransition { .. }) => assert_eq!(legal_target(state, e), None),
                Err(other) => panic!("{other}"),
            }
        }
        let c = t.call(&a, &call.call_id).unwrap();
        assert_eq!(c.state == CallState::Terminated, c.terminal_reason.is_some());
        for pair in c.history.windows(2) {
            let edge = LEGAL.iter().any(|(f, _, to)| *f == pair[0] && *to == pair[1]);
            assert!(edge, "trial {trial}: {:?}", c.history);
        }
        let first_terminal = c.history.iter().position(|s| *s == CallState::Terminated);
        if let Some(i) = first_terminal {
            assert_eq!(i, c.history.len() - 1, "Terminated was exited");
        }
    }
}

#[test]
fn ringing_timeout_leaves_one_voicemail() {
    let tp = fixture::platform();
    let (a, b) = (tp.user("alice"), tp.user("bob"));
    let t = &tp.platform.telecom;
    let call = t.place_call(&a, CallTarget::Address("bob".into())).unwrap();
    assert!(t.expire_calls().unwrap().is_empty());
    tp.clock.advance(chrono::Duration::seconds(30));
    let expired = t.expire_calls().unwrap();
    assert_eq!(expired.len(), 1);
    assert_eq!(expired[0].terminal_reason, Some(TerminalReason::Timeout));
    let vm = t.list_voicemail(&b).unwrap();
    assert_eq!(vm.len(), 1);
    assert_eq!(vm[0].from, "alice");
    assert_eq!(vm[0].payload_ref, format!("missed-call:{}", call.call_id));
    assert!(t.list_voicemail(&a).unwrap().is_empty());
    // Nothing left to expire.
    tp.clock.advance(chrono::Duration::seconds(60));
    assert!(t.expire_calls().unwrap().is_empty());
    assert_eq!(t.list_voicemail(&b).unwrap().len(), 1);
}

#[test]
fn mailboxes_are_newest_first_and_read_is_monotonic() {
    let tp = fixture::platform();
    let (a, b) = (tp.user("alice"), tp.user("bob"));
    let t = &tp.platform.telecom;
    t.send_im(&a, "bob", "first").unwrap();
    tp.clock.advance(chrono::Duration::seconds(1));
    let second = t.send_im(&a, "bob@dashboard.local", "second").unwrap();
    let inbox = t.list_im(&b).unwrap();
    assert_eq!(inbox.iter().map(|m| m.body.as_str()).collect::<Vec<_>>(), ["second", "first"]);
    assert!(!inbox[0].read);
    t.mark_im_read(&b, &second.message_id).unwrap();
    t.mark_im_read(&b, &second.message_id).unwrap();
    let inbox = t.list_im(&b).unwrap();
    assert_eq!(inbox.len(), 2);
    assert!(inbox[0].read && !inbox[1].read);

    assert!(matches!(t.send_im(&a, "ghost", "hi"), Err(TelecomError::UnknownRecipient(_))));
    assert!(matches!(
        t.deposit_voice_message("ghost@elsewhere.test", "alice", "ref"),
        Err(TelecomError::UnknownRecipient(_))
    ));
    t.deposit_voice_message("bob", "+15550100", "vm-001").unwrap();
    assert_eq!(t.list_voicemail(&b).unwrap()[0].payload_ref, "vm-001");
}

#[derive(Debug, Clone)]
enum UserOp {
    AddContact(Option<u32>),
    Presence(u8),
    Call(u8),
    Im,
    Event(u8),
    Import,
}

fn user_op() -> impl Strategy<Value = UserOp> {
    prop_oneof![
        proptest::option::of(1u32..20).prop_map(UserOp::AddContact),
        (0u8..4).prop_map(UserOp::Presence),
        (0u8..3).prop_map(UserOp::Call),
        Just(UserOp::Im),
        (0u8..6).prop_map(UserOp::Event),
        Just(UserOp::Import),
    ]
}

type Snapshot = (
    Vec<dashgate_core::telecom::Contact>,
    dashgate_core::telecom::PresenceStatus,
    Vec<dashgate_core::telecom::CallSession>,
    Vec<dashgate_core::telecom::InstantMessage>,
    Vec<dashgate_core::telecom::VoiceMessage>,
);

fn snapshot(tp: &fixture::TestPlatform, u: &UserId) -> Snapshot {
    let t = &tp.platform.telecom;
    (
        t.contacts(u).unwrap(),
        t.get_presence(u, u).unwrap(),
        t.list_calls(u),
        t.list_im(u).unwrap(),
        t.list_voicemail(u).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Operations by A that are not addressed to B never touch B's state.
    #[test]
    fn cross_user_isolation(ops in proptest::collection::vec(user_op(), 1..30)) {
        let tp = fixture::platform();
        let (a, b) = (tp.user("alice"), tp.user("bob"));
        tp.user("carol");
        let t = &tp.platform.telecom;
        t.upsert_contact(&b, draft("Carol", "carol", Some(1))).unwrap();
        t.set_presence(&b, PresenceState::Busy, Some("in a meeting".into())).unwrap();
        t.place_call(&b, CallTarget::Address("carol".into())).unwrap();
        let home = tp.platform.layout.restore_on_connect(&a).unwrap().tabs[0].tab_id.clone();
        let inst = tp.platform.layout.add_widget(&a, &home, &Enabler::Im.descriptor_id(), BTreeMap::new()).unwrap();
        let before = snapshot(&tp, &b);
        let mut calls = Vec::new();

        for op in ops {
            match op {
                UserOp::AddContact(slot) => { let _ = t.upsert_contact(&a, draft("C", "carol", slot)); }
                UserOp::Presence(s) => {
                    let state = [PresenceState::Available, PresenceState::Busy, PresenceState::Away, PresenceState::Offline][s as usize];
                    t.set_presence(&a, state, None).unwrap();
                }
                UserOp::Call(k) => {
                    let to = ["carol", "echo@sim.test", "nobody@nowhere"][k as usize];
                    calls.push(t.place_call(&a, CallTarget::Address(to.into())).unwrap().call_id);
                }
                UserOp::Im => { t.send_im(&a, "carol", "hello").unwrap(); }
                UserOp::Event(e) => {
                    if let Some(id) = calls.last() {
                        let _ = t.transition_call(&a, id, CallEvent::ALL[e as usize]);
                    }
                }
                UserOp::Import => { t.import_contact_from_module(&a, &inst.instance_id, "N", "carol").unwrap(); }
            }
            prop_assert_eq!(&snapshot(&tp, &b), &before);
            let slots: Vec<u32> = t.contacts(&a).unwrap().iter().filter_map(|c| c.speed_dial_slot).collect();
            let mut uniq = slots.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assert_eq!(slots.len(), uniq.len());
        }
    }
}
