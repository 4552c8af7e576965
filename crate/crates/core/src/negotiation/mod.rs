//! Requester and provider state machines from session request through
//! commitment update.
//!
//! Agents are driven by [`RequesterAgent::handle`] / [`ProviderAgent::handle`]
//! for inbound envelopes and `on_timer` for timeouts. Every side effect
//! (outgoing envelopes, timers, phase transitions) is collected in
//! [`Effects`] for the caller to schedule.

mod commitment;
mod consistency;
mod endpoint;
pub mod messages;
mod phase;
mod provider;
mod requester;
mod skill;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash_chain_step, Hash32};
use crate::envelope::{MsgType, ReplayError, SessionId, SignedEnvelope};
use crate::model::{AgentId, NegotiatedExtension};
use crate::registry::Registry;

pub use commitment::{confirm_bind, BindingCommitment, Terms};
pub use consistency::{consistency_check, query_deadline_ms, ConsistencyFailure, Dimension, MS_PER_HOUR};
pub use endpoint::{agent_rng_seed, decode, open_sealed, Endpoint};
pub use phase::{ProviderPhase, RequesterPhase, TransitionTable, PROVIDER_TABLE_JSON, REQUESTER_TABLE_JSON};
pub use provider::{ProviderAgent, ProviderBehaviour, ProviderConfig, ProviderInstance};
pub use requester::{RequesterAgent, RequesterConfig, SessionFailure, TaskSpec, Timeouts};
pub use skill::{run_skill, translate_word, SkillKind, SkillProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NegotiationError {
    #[error("message not allowed in phase {phase}: {detail}")]
    IllegalPhase { phase: String, detail: String },
    #[error("replay rejected: {0}")]
    ReplayRejected(ReplayError),
    #[error("signature invalid")]
    SignatureInvalid,
    #[error("envelope addressed to another agent")]
    WrongRecipient,
    #[error("unknown peer {0}")]
    UnknownPeer(AgentId),
    #[error("incompatible protocol versions")]
    IncompatibleVersions,
    #[error("protocol downgrade detected")]
    DowngradeDetected,
    #[error("key confirmation failed")]
    KeyConfirmationFailed,
    #[error("consistency not verified for {0}")]
    ConsistencyNotVerified(AgentId),
    #[error("terms differ from the draft")]
    TermsMismatch,
    #[error("execution failed: {0}")]
    ExecutionFailure(String),
    #[error("payload does not fit the capability slots")]
    SlotMismatch,
    #[error("deadline exceeded")]
    DeadlineExceeded,
    #[error("rate limited")]
    RateLimited,
    #[error("malformed body: {0}")]
    Malformed(String),
    #[error("invariant breach: {0}")]
    InvariantBreach(String),
}

impl NegotiationError {
    pub fn name(&self) -> &'static str {
        match self {
            NegotiationError::IllegalPhase { .. } => "IllegalPhase",
            NegotiationError::ReplayRejected(e) => e.name(),
            NegotiationError::SignatureInvalid => "SignatureInvalid",
            NegotiationError::WrongRecipient => "WrongRecipient",
            NegotiationError::UnknownPeer(_) => "UnknownPeer",
            NegotiationError::IncompatibleVersions => "IncompatibleVersions",
            NegotiationError::DowngradeDetected => "DowngradeDetected",
            NegotiationError::KeyConfirmationFailed => "KeyConfirmationFailed",
            NegotiationError::ConsistencyNotVerified(_) => "ConsistencyNotVerified",
            NegotiationError::TermsMismatch => "TermsMismatch",
            NegotiationError::ExecutionFailure(_) => "ExecutionFailure",
            NegotiationError::SlotMismatch => "SlotMismatch",
            NegotiationError::DeadlineExceeded => "DeadlineExceeded",
            NegotiationError::RateLimited => "RateLimited",
            NegotiationError::Malformed(_) => "Malformed",
            NegotiationError::InvariantBreach(_) => "InvariantBreach",
        }
    }

    pub fn is_replay(&self) -> bool {
        matches!(self, NegotiationError::ReplayRejected(_))
    }

    fn illegal(phase: impl std::fmt::Display, detail: impl Into<String>) -> Self {
        NegotiationError::IllegalPhase { phase: phase.to_string(), detail: detail.into() }
    }
}

/// Secure channel state shared by the two ends of a session.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: SessionId,
    pub negotiated: NegotiatedExtension,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub session_key: [u8; 32],
    #[serde(with = "crate::encoding::hex_bytes")]
    pub peer_extension_list_hash: Hash32,
    pub established_at: u64,
}

impl std::fmt::Debug for SessionRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionRecord")
            .field("session_id", &self.session_id)
            .field("negotiated", &self.negotiated)
            .field("established_at", &self.established_at)
            .finish_non_exhaustive()
    }
}

/// Envelope hashes seen by one negotiation instance, with a running chain
/// head.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(with = "hex_list")]
    pub hashes: Vec<Hash32>,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub head: Hash32,
}

impl Transcript {
    pub fn push(&mut self, env: &SignedEnvelope) {
        let h = env.hash();
        self.head = hash_chain_step(&self.head, &h);
        self.hashes.push(h);
    }

    /// Recomputes the head from `hashes`.
    pub fn recompute(hashes: &[Hash32]) -> Hash32 {
        hashes.iter().fold([0u8; 32], |head, h| hash_chain_step(&head, h))
    }

    pub fn verify(&self) -> bool {
        Self::recompute(&self.hashes) == self.head
    }
}

mod hex_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[[u8; 32]], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(crate::encoding::lower_hex).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[u8; 32]>, D::Error> {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|h| {
                let mut out = [0u8; 32];
                hex::decode_to_slice(h, &mut out).map_err(serde::de::Error::custom)?;
                Ok(out)
            })
            .collect()
    }
}

/// One phase change, as written to traces and audit logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub time_ms: u64,
    pub instance_id: SessionId,
    pub actor: AgentId,
    pub phase_from: String,
    pub phase_to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg_type: Option<MsgType>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_hex")]
    pub envelope_hash: Option<Hash32>,
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<[u8; 32]>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(h) => s.serialize_some(&crate::encoding::lower_hex(h)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<[u8; 32]>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|h| {
                let mut out = [0u8; 32];
                hex::decode_to_slice(h, &mut out).map_err(serde::de::Error::custom)?;
                Ok(out)
            })
            .transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "session")]
pub enum Timer {
    Discovery,
    Sessions,
    Bind,
    ExecDeadline,
    ExecDone(SessionId),
    /// Provider gives up on a negotiation that has gone quiet.
    Idle(SessionId),
}

/// Side effects of one handler call.
#[derive(Debug, Default)]
pub struct Effects {
    pub send: Vec<SignedEnvelope>,
    /// `(fire_at_ms, timer)`.
    pub timers: Vec<(u64, Timer)>,
    pub transitions: Vec<TransitionEvent>,
}

/// What a handler may touch besides its own agent.
pub struct Ctx<'a> {
    pub now: u64,
    pub registry: &'a mut Registry,
    pub out: &'a mut Effects,
}

/// Common face of both agent kinds for the simulator.
pub trait Agent {
    fn id(&self) -> &AgentId;
    fn handle(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError>;
    fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError>;
    fn audit(&self) -> &crate::audit::AuditLog;
    /// Hash over protocol state, excluding replay bookkeeping.
    fn state_digest(&self) -> Hash32;
}
