use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cps::CandidateScore;
use crate::envelope::{MsgType, SessionId};
use crate::model::{agent_map, AgentId, Version};
use crate::negotiation::{BindingCommitment, ProviderAgent, RequesterAgent, RequesterPhase, SessionFailure};
use crate::registry::Outcome;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub time_ms: u64,
    pub agent: AgentId,
    /// `ok` or the registry error name.
    pub result: String,
}

impl RegistrationRecord {
    pub fn new(time_ms: u64, agent: AgentId, result: Result<(), &str>) -> Self {
        RegistrationRecord { time_ms, agent, result: result.err().unwrap_or("ok").into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub time_ms: u64,
    pub from: AgentId,
    pub to: AgentId,
    pub msg_type: MsgType,
    pub error: String,
    /// `network`, `duplicate` or `injected`.
    pub origin: String,
}

/// Fate of one adversary-injected envelope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionOutcome {
    pub adversary: String,
    pub time_ms: u64,
    pub to: AgentId,
    pub msg_type: MsgType,
    pub result: String,
    pub replay_rejected: bool,
    /// Whether the victim's protocol state digest moved.
    pub state_changed: bool,
}

/// An envelope rewritten in transit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperRecord {
    pub adversary: String,
    pub session_id: SessionId,
    pub from: AgentId,
    pub to: AgentId,
    pub msg_type: MsgType,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FloodSummary {
    pub flooder: Option<AgentId>,
    /// Result name to count.
    pub registrations: BTreeMap<String, u32>,
    pub queries: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequesterSummary {
    pub id: AgentId,
    pub phase: RequesterPhase,
    /// Surviving candidates, best first.
    pub ranking: Vec<AgentId>,
    /// Eliminated candidate to reason.
    #[serde(with = "agent_map")]
    pub eliminated: BTreeMap<AgentId, String>,
    pub scores: Vec<CandidateScore>,
    /// Candidates an SSR was sent to.
    pub contacted: Vec<AgentId>,
    /// Candidates with an established secure session.
    pub sessions: Vec<AgentId>,
    pub session_failures: Vec<SessionFailure>,
    /// Candidate to failed consistency dimensions.
    #[serde(with = "agent_map")]
    pub consistency_failures: BTreeMap<AgentId, Vec<String>>,
    pub selected: Option<AgentId>,
    pub binding: Option<BindingCommitment>,
    pub result_quality: Option<f64>,
    pub outcome: Option<Outcome>,
    pub abort_reason: Option<String>,
    pub accepts_sent: u32,
    pub bindings_formed: u32,
    pub transcript_head: String,
    pub transcript_valid: bool,
}

impl RequesterSummary {
    pub fn of(r: &RequesterAgent) -> Self {
        RequesterSummary {
            id: crate::negotiation::Agent::id(r).clone(),
            phase: r.phase(),
            ranking: r.shortlist().to_vec(),
            eliminated: r
                .scores()
                .iter()
                .filter_map(|s| s.elimination_reason.map(|e| (s.agent.clone(), e.as_str().to_owned())))
                .collect(),
            scores: r.scores().to_vec(),
            contacted: r.contacted().iter().cloned().collect(),
            sessions: r.sessions().keys().cloned().collect(),
            session_failures: r.session_failures().to_vec(),
            consistency_failures: r
                .consistency_failures()
                .iter()
                .map(|(a, f)| (a.clone(), f.iter().map(|x| x.dimension.as_str().to_owned()).collect()))
                .collect(),
            selected: r.selected().cloned(),
            binding: r.binding().cloned(),
            result_quality: r.result().map(|x| x.quality),
            outcome: r.outcome().map(|o| o.outcome),
            abort_reason: r.abort_reason().map(str::to_owned),
            accepts_sent: r.accepts_sent(),
            bindings_formed: r.bindings_formed(),
            transcript_head: hex::encode(r.transcript().head),
            transcript_valid: r.transcript().verify(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub requester: AgentId,
    pub phase: String,
    pub version: Version,
    pub failure: Option<String>,
    pub bound: bool,
    pub registry_update: Option<Result<f64, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSummary {
    pub phase: String,
    pub reputation: f64,
    pub instances: BTreeMap<SessionId, InstanceSummary>,
}

impl ProviderSummary {
    pub fn of(p: &ProviderAgent) -> Self {
        ProviderSummary {
            phase: p.latest_phase().as_str().into(),
            reputation: p.anri().metadata.reputation_or_default(),
            instances: p
                .instances()
                .iter()
                .map(|(sid, i)| {
                    let s = InstanceSummary {
                        requester: i.requester.clone(),
                        phase: i.phase.as_str().into(),
                        version: i.negotiated.version,
                        failure: i.failure.clone(),
                        bound: i.commitment.is_some(),
                        registry_update: i.registry_update.clone(),
                    };
                    (*sid, s)
                })
                .collect(),
        }
    }
}

/// Summary of one run, written canonically encoded next to the trace.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub end_ms: u64,
    /// The horizon cut the run short.
    pub truncated: bool,
    pub requester: Option<RequesterSummary>,
    #[serde(with = "agent_map")]
    pub providers: BTreeMap<AgentId, ProviderSummary>,
    pub registrations: Vec<RegistrationRecord>,
    #[serde(with = "agent_map")]
    pub initial_reputations: BTreeMap<AgentId, f64>,
    #[serde(with = "agent_map")]
    pub reputations: BTreeMap<AgentId, f64>,
    /// Live directory records at the end of the run.
    pub live_agents: Vec<AgentId>,
    pub delivered: u64,
    pub dropped: u64,
    pub duplicated: u64,
    pub injected: u64,
    pub undeliverable: u64,
    #[serde(with = "agent_map")]
    pub audit_heads: BTreeMap<AgentId, String>,
    pub audit_valid: bool,
    pub rejections: Vec<Rejection>,
    pub injections: Vec<InjectionOutcome>,
    pub tampering: Vec<TamperRecord>,
    /// Keyed by adversary index.
    pub flood: BTreeMap<usize, FloodSummary>,
    /// Agents or instances that ended outside a terminal phase.
    pub nonterminal: Vec<String>,
    pub invariant_breaches: Vec<String>,
    /// Every commitment an honest party holds carries two valid signatures.
    pub commitments_verified: bool,
    pub registry_digest: String,
}

impl SimReport {
    pub fn rejections_named(&self, error: &str) -> usize {
        self.rejections.iter().filter(|r| r.error == error).count()
    }
}
