use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RequesterPhase {
    Init,
    Discovered,
    Screened,
    SessionsRequested,
    SessionsEstablished,
    Agreed,
    Bound,
    Executing,
    Committed,
    Aborted,
    Finalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProviderPhase {
    Registered,
    OfferSent,
    SessionEstablished,
    Accepted,
    Rejected,
    Committed,
    Executing,
    Done,
    Aborted,
}

impl RequesterPhase {
    pub const ALL: [RequesterPhase; 11] = [
        RequesterPhase::Init,
        RequesterPhase::Discovered,
        RequesterPhase::Screened,
        RequesterPhase::SessionsRequested,
        RequesterPhase::SessionsEstablished,
        RequesterPhase::Agreed,
        RequesterPhase::Bound,
        RequesterPhase::Executing,
        RequesterPhase::Committed,
        RequesterPhase::Aborted,
        RequesterPhase::Finalized,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RequesterPhase::Init => "INIT",
            RequesterPhase::Discovered => "DISCOVERED",
            RequesterPhase::Screened => "SCREENED",
            RequesterPhase::SessionsRequested => "SESSIONS_REQUESTED",
            RequesterPhase::SessionsEstablished => "SESSIONS_ESTABLISHED",
            RequesterPhase::Agreed => "AGREED",
            RequesterPhase::Bound => "BOUND",
            RequesterPhase::Executing => "EXECUTING",
            RequesterPhase::Committed => "COMMITTED",
            RequesterPhase::Aborted => "ABORTED",
            RequesterPhase::Finalized => "FINALIZED",
        }
    }
}

impl ProviderPhase {
    pub const ALL: [ProviderPhase; 9] = [
        ProviderPhase::Registered,
        ProviderPhase::OfferSent,
        ProviderPhase::SessionEstablished,
        ProviderPhase::Accepted,
        ProviderPhase::Rejected,
        ProviderPhase::Committed,
        ProviderPhase::Executing,
        ProviderPhase::Done,
        ProviderPhase::Aborted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderPhase::Registered => "REGISTERED",
            ProviderPhase::OfferSent => "OFFER_SENT",
            ProviderPhase::SessionEstablished => "SESSION_ESTABLISHED",
            ProviderPhase::Accepted => "ACCEPTED",
            ProviderPhase::Rejected => "REJECTED",
            ProviderPhase::Committed => "COMMITTED",
            ProviderPhase::Executing => "EXECUTING",
            ProviderPhase::Done => "DONE",
            ProviderPhase::Aborted => "ABORTED",
        }
    }
}

impl fmt::Display for RequesterPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for ProviderPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const REQUESTER_TABLE_JSON: &str = include_str!("../../data/requester_transitions.json");
pub const PROVIDER_TABLE_JSON: &str = include_str!("../../data/provider_transitions.json");

/// A published legal-transition table.
#[derive(Debug, Clone, Deserialize)]
pub struct TransitionTable {
    pub machine: String,
    pub initial: String,
    pub terminal: BTreeSet<String>,
    pub transitions: BTreeSet<(String, String)>,
}

impl TransitionTable {
    pub fn parse(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn allows(&self, from: &str, to: &str) -> bool {
        self.transitions.contains(&(from.to_owned(), to.to_owned()))
    }

    pub fn is_terminal(&self, phase: &str) -> bool {
        self.terminal.contains(phase)
    }

    pub fn requester() -> &'static TransitionTable {
        static T: OnceLock<TransitionTable> = OnceLock::new();
        T.get_or_init(|| Self::parse(REQUESTER_TABLE_JSON).expect("bundled requester table parses"))
    }

    pub fn provider() -> &'static TransitionTable {
        static T: OnceLock<TransitionTable> = OnceLock::new();
        T.get_or_init(|| Self::parse(PROVIDER_TABLE_JSON).expect("bundled provider table parses"))
    }
}
