//! The simulated call-session state machine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CallState {
    Idle,
    Inviting,
    Ringing,
    Active,
    Terminated,
}

impl CallState {
    pub const ALL: [CallState; 5] = [
        CallState::Idle,
        CallState::Inviting,
        CallState::Ringing,
        CallState::Active,
        CallState::Terminated,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallEvent {
    Ring,
    Answer,
    Reject,
    Cancel,
    Hangup,
    Timeout,
}

impl CallEvent {
    pub const ALL: [CallEvent; 6] = [
        CallEvent::Ring,
        CallEvent::Answer,
        CallEvent::Reject,
        CallEvent::Cancel,
        CallEvent::Hangup,
        CallEvent::Timeout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CallEvent::Ring => "ring",
            CallEvent::Answer => "answer",
            CallEvent::Reject => "reject",
            CallEvent::Cancel => "cancel",
            CallEvent::Hangup => "hangup",
            CallEvent::Timeout => "timeout",
        }
    }
}

impl FromStr for CallEvent {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        CallEvent::ALL.into_iter().find(|e| e.as_str() == s).ok_or(())
    }
}

impl fmt::Display for CallEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    AnsweredHangup,
    Rejected,
    Cancelled,
    Timeout,
    CalleeUnknown,
}

/// The legal edges. Anything not listed here is rejected and leaves the
/// call untouched; `Terminated` has no outgoing edges.
pub fn next_state(from: CallState, event: CallEvent) -> Option<(CallState, Option<TerminalReason>)> {
    use CallEvent::*;
    use CallState::*;
    match (from, event) {
        (Inviting, Ring) => Some((Ringing, None)),
        (Inviting, Cancel) => Some((Terminated, Some(TerminalReason::Cancelled))),
        (Inviting, Timeout) => Some((Terminated, Some(TerminalReason::Timeout))),
        (Ringing, Answer) => Some((Active, None)),
        (Ringing, Reject) => Some((Terminated, Some(TerminalReason::Rejected))),
        (Ringing, Cancel) => Some((Terminated, Some(TerminalReason::Cancelled))),
        (Ringing, Timeout) => Some((Terminated, Some(TerminalReason::Timeout))),
        (Active, Hangup) => Some((Terminated, Some(TerminalReason::AnsweredHangup))),
        _ => None,
    }
}
