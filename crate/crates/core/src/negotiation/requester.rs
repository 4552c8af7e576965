use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::commitment::{confirm_bind, BindingCommitment, Terms};
use super::consistency::{consistency_check, query_deadline_ms, ConsistencyFailure, MS_PER_HOUR};
use super::endpoint::{decode, open_sealed, Endpoint};
use super::messages::*;
use super::phase::{RequesterPhase, TransitionTable};
use super::{Agent, Ctx, NegotiationError, SessionRecord, Timer, Transcript, TransitionEvent};
use crate::audit::AuditLog;
use crate::cps::{evaluate_cohort, rank_candidates, CandidateScore, ScoringWeights};
use crate::crypto::{derive_session_key, sha3, EphemeralSecret, Hash32, KeyPair, PublicKey};
use crate::encoding::canonical_encode;
use crate::envelope::{MsgType, SessionId, SignedEnvelope};
use crate::model::{
    match_capability, negotiate_extension, AgentId, Anri, CapabilityQuery, CapabilitySpec, ProtocolExtension,
};
use crate::registry::{Outcome, OutcomeReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeouts {
    pub discovery_ms: u64,
    pub session_ms: u64,
    pub bind_ms: u64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts { discovery_ms: 5_000, session_ms: 5_000, bind_ms: 5_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub units: f64,
    pub quality_min: f64,
    /// Penalty as a fraction of the price.
    pub penalty_rate: f64,
    pub payload: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequesterConfig {
    /// Requirements the selected provider must meet.
    pub query: CapabilityQuery,
    /// Query sent to the directory; defaults to `query`. A looser discovery
    /// query lets screening see, and report on, weaker candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discovery_query: Option<CapabilityQuery>,
    #[serde(default)]
    pub weights: ScoringWeights,
    #[serde(default = "default_parallel")]
    pub parallel_sessions: usize,
    #[serde(default = "default_limit")]
    pub discovery_limit: u32,
    pub extension: ProtocolExtension,
    pub task: TaskSpec,
    #[serde(default)]
    pub timeouts: Timeouts,
}

fn default_parallel() -> usize {
    3
}

fn default_limit() -> u32 {
    32
}

/// Why a session with one candidate did not come up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionFailure {
    pub agent: AgentId,
    pub reason: String,
}

struct Pending {
    session_id: SessionId,
    ephemeral: EphemeralSecret,
    nonce_r: [u8; 16],
    ssr_hash: Hash32,
    /// Set once SSE_INIT has gone out.
    awaiting_confirm: Option<SessionRecord>,
}

pub struct RequesterAgent {
    ep: Endpoint,
    cfg: RequesterConfig,
    ans: AgentId,
    ans_key: PublicKey,
    ca_root: PublicKey,
    table: &'static TransitionTable,
    phase: RequesterPhase,
    instance: SessionId,
    candidates: BTreeMap<AgentId, Anri>,
    scores: Vec<CandidateScore>,
    shortlist: Vec<AgentId>,
    contacted: BTreeSet<AgentId>,
    pending: BTreeMap<AgentId, Pending>,
    sessions: BTreeMap<AgentId, SessionRecord>,
    offers: BTreeMap<AgentId, Option<CapabilitySpec>>,
    failures: Vec<SessionFailure>,
    consistency: BTreeMap<AgentId, Vec<ConsistencyFailure>>,
    selected: Option<AgentId>,
    draft: Option<BindingCommitment>,
    binding: Option<BindingCommitment>,
    result: Option<ExecResult>,
    outcome: Option<OutcomeReport>,
    abort_reason: Option<String>,
    transcript: Transcript,
    audit: AuditLog,
    accepts_sent: u32,
    bindings_formed: u32,
}

#[derive(Serialize)]
struct DigestView<'a> {
    phase: RequesterPhase,
    shortlist: &'a [AgentId],
    sessions: Vec<(&'a AgentId, &'a SessionRecord)>,
    pending: Vec<(&'a AgentId, bool)>,
    failures: &'a [SessionFailure],
    selected: &'a Option<AgentId>,
    draft: &'a Option<BindingCommitment>,
    binding: &'a Option<BindingCommitment>,
    result: &'a Option<ExecResult>,
    outcome: &'a Option<OutcomeReport>,
    transcript: &'a Transcript,
    accepts_sent: u32,
    bindings_formed: u32,
}

fn attributable(reason: &str) -> bool {
    !matches!(reason, "bind_timeout")
}

impl RequesterAgent {
    pub fn new(
        id: AgentId,
        key: KeyPair,
        rng_seed: [u8; 32],
        cfg: RequesterConfig,
        ans: AgentId,
        ans_key: PublicKey,
        ca_root: PublicKey,
    ) -> Self {
        let mut ep = Endpoint::new(id, key, rng_seed);
        let instance = SessionId(ep.random());
        RequesterAgent {
            ep,
            cfg,
            ans,
            ans_key,
            ca_root,
            table: TransitionTable::requester(),
            phase: RequesterPhase::Init,
            instance,
            candidates: BTreeMap::new(),
            scores: Vec::new(),
            shortlist: Vec::new(),
            contacted: BTreeSet::new(),
            pending: BTreeMap::new(),
            sessions: BTreeMap::new(),
            offers: BTreeMap::new(),
            failures: Vec::new(),
            consistency: BTreeMap::new(),
            selected: None,
            draft: None,
            binding: None,
            result: None,
            outcome: None,
            abort_reason: None,
            transcript: Transcript::default(),
            audit: AuditLog::new(),
            accepts_sent: 0,
            bindings_formed: 0,
        }
    }

    pub fn phase(&self) -> RequesterPhase {
        self.phase
    }
    pub fn instance_id(&self) -> SessionId {
        self.instance
    }
    pub fn public_key(&self) -> PublicKey {
        self.ep.public_key()
    }
    pub fn config(&self) -> &RequesterConfig {
        &self.cfg
    }
    pub fn scores(&self) -> &[CandidateScore] {
        &self.scores
    }
    pub fn shortlist(&self) -> &[AgentId] {
        &self.shortlist
    }
    pub fn sessions(&self) -> &BTreeMap<AgentId, SessionRecord> {
        &self.sessions
    }
    pub fn contacted(&self) -> &BTreeSet<AgentId> {
        &self.contacted
    }
    pub fn session_failures(&self) -> &[SessionFailure] {
        &self.failures
    }
    pub fn consistency_failures(&self) -> &BTreeMap<AgentId, Vec<ConsistencyFailure>> {
        &self.consistency
    }
    pub fn selected(&self) -> Option<&AgentId> {
        self.selected.as_ref()
    }
    pub fn binding(&self) -> Option<&BindingCommitment> {
        self.binding.as_ref()
    }
    pub fn result(&self) -> Option<&ExecResult> {
        self.result.as_ref()
    }
    pub fn outcome(&self) -> Option<&OutcomeReport> {
        self.outcome.as_ref()
    }
    pub fn abort_reason(&self) -> Option<&str> {
        self.abort_reason.as_deref()
    }
    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }
    pub fn accepts_sent(&self) -> u32 {
        self.accepts_sent
    }
    pub fn bindings_formed(&self) -> u32 {
        self.bindings_formed
    }
    pub fn candidate(&self, id: &AgentId) -> Option<&Anri> {
        self.candidates.get(id)
    }

    fn transition(
        &mut self,
        to: RequesterPhase,
        env: Option<&SignedEnvelope>,
        ctx: &mut Ctx<'_>,
    ) -> Result<(), NegotiationError> {
        let from = self.phase;
        if !self.table.allows(from.as_str(), to.as_str()) {
            return Err(NegotiationError::InvariantBreach(format!("requester {from} -> {to}")));
        }
        self.phase = to;
        let ev = TransitionEvent {
            time_ms: ctx.now,
            instance_id: self.instance,
            actor: self.ep.id.clone(),
            phase_from: from.as_str().into(),
            phase_to: to.as_str().into(),
            msg_type: env.map(|e| e.msg_type),
            envelope_hash: env.map(|e| e.hash()),
        };
        self.audit.append(ctx.now, &self.ep.id, "transition", &ev).expect("transition encodes");
        ctx.out.transitions.push(ev);
        Ok(())
    }

    fn send(&mut self, env: SignedEnvelope, ctx: &mut Ctx<'_>) {
        self.transcript.push(&env);
        ctx.out.send.push(env);
    }

    /// Sends the discovery query and arms the discovery timer.
    pub fn start(&mut self, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        if self.phase != RequesterPhase::Init || !self.transcript.hashes.is_empty() {
            return Err(NegotiationError::illegal(self.phase, "already started"));
        }
        let query = self.cfg.discovery_query.clone().unwrap_or_else(|| self.cfg.query.clone());
        let body = CdQuery { query, limit: self.cfg.discovery_limit };
        let ans = self.ans.clone();
        let env = self.ep.envelope(&ans, self.instance, MsgType::CdQuery, &body, ctx.now);
        self.send(env, ctx);
        ctx.out.timers.push((ctx.now + self.cfg.timeouts.discovery_ms, Timer::Discovery));
        Ok(())
    }

    fn sender_key(&self, env: &SignedEnvelope) -> Result<PublicKey, NegotiationError> {
        if env.msg_type == MsgType::CdResponse {
            if env.sender != self.ans {
                return Err(NegotiationError::UnknownPeer(env.sender.clone()));
            }
            return Ok(self.ans_key);
        }
        self.candidates
            .get(&env.sender)
            .map(|a| a.security.public_key)
            .ok_or_else(|| NegotiationError::UnknownPeer(env.sender.clone()))
    }

    fn on_cd_response(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        if self.phase != RequesterPhase::Init || env.session_id != self.instance {
            return Err(NegotiationError::illegal(self.phase, "unexpected CD_RESPONSE"));
        }
        let body: CdResponse = decode(env)?;
        self.transcript.push(env);
        self.transition(RequesterPhase::Discovered, Some(env), ctx)?;
        if let Some(err) = body.error {
            return self.abort_unbound(&format!("discovery: {err}"), ctx);
        }
        for a in body.candidates {
            self.candidates.insert(a.id.clone(), a);
        }
        let cohort: Vec<Anri> = self.candidates.values().cloned().collect();
        self.scores = evaluate_cohort(&self.cfg.query, &cohort, &self.cfg.weights, &self.ca_root);
        self.shortlist = rank_candidates(&self.scores);
        self.audit.append(ctx.now, &self.ep.id, "screening", &self.scores).expect("scores encode");
        self.transition(RequesterPhase::Screened, None, ctx)?;
        if self.shortlist.is_empty() {
            return self.abort_unbound("no_candidates", ctx);
        }
        let top: Vec<AgentId> = self.shortlist.iter().take(self.cfg.parallel_sessions.max(1)).cloned().collect();
        for target in top {
            self.send_ssr(&target, ctx)?;
        }
        ctx.out.timers.push((ctx.now + self.cfg.timeouts.session_ms, Timer::Sessions));
        Ok(())
    }

    /// Opens a session with a shortlisted candidate.
    pub fn send_ssr(&mut self, target: &AgentId, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let phase_ok = matches!(self.phase, RequesterPhase::Screened | RequesterPhase::SessionsRequested);
        if !phase_ok || !self.shortlist.contains(target) || self.contacted.contains(target) {
            return Err(NegotiationError::illegal(self.phase, format!("SSR to {target}")));
        }
        let eph = EphemeralSecret::from_bytes(self.ep.random());
        let nonce_r: [u8; 16] = self.ep.random();
        let session_id = SessionId(self.ep.random());
        let body = Ssr {
            requester: self.ep.id.clone(),
            protocol_version: self.cfg.extension.version,
            security: SecurityParams {
                ephemeral_public: eph.public(),
                nonce: nonce_r,
                encryption_level: self.cfg.query.security_reqs.encryption_level,
            },
            extension: self.cfg.extension.clone(),
        };
        let env = self.ep.envelope(target, session_id, MsgType::Ssr, &body, ctx.now);
        let ssr_hash = env.hash();
        self.send(env.clone(), ctx);
        self.contacted.insert(target.clone());
        self.pending.insert(
            target.clone(),
            Pending { session_id, ephemeral: eph, nonce_r, ssr_hash, awaiting_confirm: None },
        );
        if self.phase == RequesterPhase::Screened {
            self.transition(RequesterPhase::SessionsRequested, Some(&env), ctx)?;
        }
        Ok(())
    }

    fn fail_session(&mut self, peer: &AgentId, reason: &str, notify: bool, ctx: &mut Ctx<'_>) {
        if let Some(p) = self.pending.remove(peer) {
            if notify {
                let body = Decision { reason: Some(reason.to_owned()) };
                let env = self.ep.envelope(peer, p.session_id, MsgType::Abort, &body, ctx.now);
                self.send(env, ctx);
            }
            self.ep.forget_session(&p.session_id);
        }
        self.failures.push(SessionFailure { agent: peer.clone(), reason: reason.to_owned() });
    }

    fn pending_for(&self, env: &SignedEnvelope) -> Result<&Pending, NegotiationError> {
        match self.pending.get(&env.sender) {
            Some(p) if p.session_id == env.session_id && self.phase == RequesterPhase::SessionsRequested => Ok(p),
            _ => Err(NegotiationError::illegal(self.phase, format!("no pending session for {}", env.msg_type))),
        }
    }

    fn on_sso(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let p = self.pending_for(env)?;
        if p.awaiting_confirm.is_some() {
            return Err(NegotiationError::illegal(self.phase, "second SSO"));
        }
        let body: Sso = decode(env)?;
        if body.ssr_hash != p.ssr_hash || body.provider != env.sender {
            return Err(NegotiationError::Malformed("SSO does not answer our SSR".into()));
        }
        self.transcript.push(env);
        let peer = env.sender.clone();
        let anri_key = self.candidates[&peer].security.public_key;
        if !body.certificate.chains_to(&self.ca_root)
            || body.certificate.subject != peer
            || body.certificate.public_key != anri_key
        {
            self.fail_session(&peer, "CredentialFailure", true, ctx);
            return self.maybe_finish_sessions(ctx);
        }
        let negotiated = match negotiate_extension(&self.cfg.extension, &body.extension) {
            Ok(n) => n,
            Err(_) => {
                self.fail_session(&peer, "IncompatibleVersions", true, ctx);
                return self.maybe_finish_sessions(ctx);
            }
        };
        let offered = body
            .capabilities
            .iter()
            .map(|c| (match_capability(&self.cfg.query, c), c))
            .filter(|(m, _)| m.matched)
            .fold(None::<(f64, &CapabilitySpec)>, |best, (m, c)| match best {
                Some((s, _)) if s >= m.similarity => best,
                _ => Some((m.similarity, c)),
            })
            .map(|(_, c)| c.clone());
        self.offers.insert(peer.clone(), offered);

        let p = self.pending.get(&peer).expect("checked above");
        let shared = p.ephemeral.agree(&body.security.ephemeral_public);
        let key = derive_session_key(&shared, &p.nonce_r, &body.security.nonce);
        let record = SessionRecord {
            session_id: p.session_id,
            negotiated: negotiated.clone(),
            session_key: key,
            peer_extension_list_hash: body.extension.advertisement_hash(),
            established_at: ctx.now,
        };
        let init = SseInit {
            negotiated,
            peer_list_hash: record.peer_extension_list_hash,
            own_list_hash: self.cfg.extension.advertisement_hash(),
        };
        let out = self.ep.encrypted(&peer, record.session_id, MsgType::SseInit, &key, &init, ctx.now);
        self.send(out, ctx);
        self.pending.get_mut(&peer).expect("checked above").awaiting_confirm = Some(record);
        Ok(())
    }

    fn on_sse_confirm(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let p = self.pending_for(env)?;
        let Some(record) = p.awaiting_confirm.clone() else {
            return Err(NegotiationError::illegal(self.phase, "SSE_CONFIRM before SSE_INIT"));
        };
        self.transcript.push(env);
        let peer = env.sender.clone();
        let body: SseConfirm = match open_sealed(env, &record.session_key) {
            Ok(b) => b,
            Err(NegotiationError::KeyConfirmationFailed) => {
                self.fail_session(&peer, "KeyConfirmationFailed", true, ctx);
                return self.maybe_finish_sessions(ctx);
            }
            Err(e) => return Err(e),
        };
        let honest = body.peer_list_hash == self.cfg.extension.advertisement_hash()
            && body.own_list_hash == record.peer_extension_list_hash
            && body.negotiated == record.negotiated;
        if !honest {
            self.fail_session(&peer, "DowngradeDetected", true, ctx);
            return self.maybe_finish_sessions(ctx);
        }
        let mut record = record;
        record.established_at = ctx.now;
        self.pending.remove(&peer);
        self.sessions.insert(peer, record);
        self.maybe_finish_sessions(ctx)
    }

    fn on_session_abort(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        self.pending_for(env)?;
        let body: Decision = decode(env)?;
        self.transcript.push(env);
        let reason = body.reason.unwrap_or_else(|| "aborted".into());
        self.fail_session(&env.sender.clone(), &reason, false, ctx);
        self.maybe_finish_sessions(ctx)
    }

    fn maybe_finish_sessions(&mut self, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        if self.phase != RequesterPhase::SessionsRequested || !self.pending.is_empty() {
            return Ok(());
        }
        self.close_session_phase(ctx)
    }

    fn close_session_phase(&mut self, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        if self.sessions.is_empty() {
            return self.abort_unbound("no_sessions", ctx);
        }
        self.transition(RequesterPhase::SessionsEstablished, None, ctx)?;
        let order: Vec<AgentId> = self.shortlist.iter().filter(|a| self.sessions.contains_key(*a)).cloned().collect();
        for peer in order {
            let terms = self.draft_terms(&peer);
            match self.check_offer(&peer, &terms) {
                Ok(()) => return self.send_ssa(&peer, ctx),
                Err(f) => {
                    self.consistency.insert(peer, f);
                }
            }
        }
        let peers: Vec<AgentId> = self.sessions.keys().cloned().collect();
        for peer in peers {
            self.reject(&peer, "consistency", ctx);
        }
        self.abort_unbound("consistency", ctx)
    }

    fn draft_terms(&self, peer: &AgentId) -> Terms {
        let anri = &self.candidates[peer];
        let session = &self.sessions[peer];
        let offered = self.offers.get(peer).cloned().flatten();
        let deadline_ms = offered
            .as_ref()
            .and_then(|c| c.constraints.get("deadline_hours"))
            .map(|h| session.established_at + (h.as_f64() * MS_PER_HOUR as f64) as u64)
            .or_else(|| query_deadline_ms(&self.cfg.query, session.established_at))
            .unwrap_or(session.established_at + 24 * MS_PER_HOUR);
        let price = anri.metadata.cost_per_unit * self.cfg.task.units;
        Terms { price, deadline_ms, quality_min: self.cfg.task.quality_min, penalty: price * self.cfg.task.penalty_rate }
    }

    fn check_offer(&self, peer: &AgentId, terms: &Terms) -> Result<(), Vec<ConsistencyFailure>> {
        match self.offers.get(peer).cloned().flatten() {
            Some(offered) => consistency_check(&self.cfg.query, &offered, &self.sessions[peer], terms),
            None => Err(vec![ConsistencyFailure {
                dimension: super::Dimension::Semantic,
                detail: "no offered capability matches".into(),
            }]),
        }
    }

    fn reject(&mut self, peer: &AgentId, reason: &str, ctx: &mut Ctx<'_>) {
        let session = self.sessions[peer].session_id;
        let env = self.ep.envelope(peer, session, MsgType::SsaReject, &SsaReject { reason: reason.into() }, ctx.now);
        self.send(env, ctx);
    }

    /// Accepts `target` and rejects every other established session.
    pub fn send_ssa(&mut self, target: &AgentId, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        if self.phase != RequesterPhase::SessionsEstablished || !self.sessions.contains_key(target) {
            return Err(NegotiationError::illegal(self.phase, format!("SSA to {target}")));
        }
        if self.accepts_sent > 0 {
            return Err(NegotiationError::InvariantBreach("second SSA_ACCEPT".into()));
        }
        let terms = self.draft_terms(target);
        if self.check_offer(target, &terms).is_err() {
            return Err(NegotiationError::ConsistencyNotVerified(target.clone()));
        }
        let capability = self.offers[target].clone().expect("checked by consistency");
        let mut draft = BindingCommitment::draft(self.ep.id.clone(), target.clone(), capability, terms);
        draft.sign_as_requester(self.ep.signer());
        let session = self.sessions[target].session_id;
        let env = self.ep.envelope(target, session, MsgType::SsaAccept, &SsaAccept { draft: draft.clone() }, ctx.now);
        self.send(env.clone(), ctx);
        self.accepts_sent += 1;
        let others: Vec<AgentId> = self.sessions.keys().filter(|a| *a != target).cloned().collect();
        for peer in others {
            self.reject(&peer, "not_selected", ctx);
        }
        self.selected = Some(target.clone());
        self.draft = Some(draft);
        self.transition(RequesterPhase::Agreed, Some(&env), ctx)?;
        ctx.out.timers.push((ctx.now + self.cfg.timeouts.bind_ms, Timer::Bind));
        Ok(())
    }

    fn is_selected(&self, env: &SignedEnvelope) -> bool {
        self.selected.as_ref() == Some(&env.sender)
            && self.sessions.get(&env.sender).map(|s| s.session_id) == Some(env.session_id)
    }

    fn on_bc(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        if self.phase != RequesterPhase::Agreed || !self.is_selected(env) {
            return Err(NegotiationError::illegal(self.phase, "unexpected BC"));
        }
        let body: Bc = decode(env)?;
        self.transcript.push(env);
        let draft = self.draft.as_ref().expect("AGREED has a draft");
        let prov_key = self.candidates[&env.sender].security.public_key;
        if let Err(e) = confirm_bind(draft, &body.commitment, &self.ep.public_key(), &prov_key, ctx.now) {
            return self.abort_selected(e.name(), Some(env), ctx);
        }
        if self.binding.is_some() {
            return Err(NegotiationError::InvariantBreach("second binding".into()));
        }
        self.binding = Some(body.commitment);
        self.bindings_formed += 1;
        self.transition(RequesterPhase::Bound, Some(env), ctx)?;
        self.execute(ctx)
    }

    fn execute(&mut self, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let peer = self.selected.clone().expect("bound to a provider");
        let session = self.sessions[&peer].clone();
        let req = ExecRequest { input: self.cfg.task.payload.clone() };
        let env = self.ep.encrypted(&peer, session.session_id, MsgType::ExecRequest, &session.session_key, &req, ctx.now);
        self.send(env.clone(), ctx);
        self.transition(RequesterPhase::Executing, Some(&env), ctx)?;
        let deadline = self.binding.as_ref().expect("bound").terms.deadline_ms;
        ctx.out.timers.push((deadline + 1, Timer::ExecDeadline));
        Ok(())
    }

    fn on_exec_result(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        if self.phase != RequesterPhase::Executing || !self.is_selected(env) {
            return Err(NegotiationError::illegal(self.phase, "unexpected EXEC_RESULT"));
        }
        let key = self.sessions[&env.sender].session_key;
        let result: ExecResult = open_sealed(env, &key)?;
        self.transcript.push(env);
        self.result = Some(result.clone());
        self.decide(&result, Some(env), ctx)
    }

    /// Reason to abort, if any; `None` means commit.
    pub fn judge(binding: &BindingCommitment, result: &ExecResult, arrived_at: u64) -> Option<String> {
        if let Some(err) = &result.error {
            return Some(err.clone());
        }
        if arrived_at > binding.terms.deadline_ms {
            return Some("deadline".into());
        }
        if !(result.quality >= binding.terms.quality_min) {
            return Some("quality".into());
        }
        let slots: BTreeSet<&str> = binding.capability.output.iter().map(|s| s.name.as_str()).collect();
        let got: BTreeSet<&str> = result.output.keys().map(String::as_str).collect();
        if slots != got {
            return Some("slots".into());
        }
        None
    }

    fn decide(&mut self, result: &ExecResult, env: Option<&SignedEnvelope>, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let binding = self.binding.as_ref().expect("executing under a binding");
        match Self::judge(binding, result, ctx.now) {
            None => {
                let peer = self.selected.clone().expect("bound");
                let session = self.sessions[&peer].session_id;
                let out = self.ep.envelope(&peer, session, MsgType::Commit, &Decision { reason: None }, ctx.now);
                self.send(out, ctx);
                self.transition(RequesterPhase::Committed, env, ctx)?;
                self.dcu(Outcome::Commit, None, ctx)
            }
            Some(reason) => self.abort_selected(&reason, env, ctx),
        }
    }

    fn abort_selected(&mut self, reason: &str, env: Option<&SignedEnvelope>, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let peer = self.selected.clone().expect("a provider was selected");
        let session = self.sessions[&peer].session_id;
        let body = Decision { reason: Some(reason.to_owned()) };
        let out = self.ep.envelope(&peer, session, MsgType::Abort, &body, ctx.now);
        self.send(out, ctx);
        self.abort_reason = Some(reason.to_owned());
        self.transition(RequesterPhase::Aborted, env, ctx)?;
        self.dcu(Outcome::Abort, Some(reason), ctx)
    }

    fn dcu(&mut self, outcome: Outcome, reason: Option<&str>, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let peer = self.selected.clone().expect("a provider was selected");
        let session = self.sessions[&peer].session_id;
        let report = OutcomeReport {
            requester: self.ep.id.clone(),
            provider: peer.clone(),
            session_id: session,
            outcome,
            attributable: outcome == Outcome::Abort && reason.is_some_and(attributable),
            reason: reason.map(str::to_owned),
            transcript_head: self.transcript.head,
        };
        let env = self.ep.envelope(&peer, session, MsgType::Dcu, &report, ctx.now);
        self.send(env.clone(), ctx);
        self.audit.append(ctx.now, &self.ep.id, "dcu", &report).expect("report encodes");
        self.outcome = Some(report);
        for s in self.sessions.values_mut() {
            self.ep.forget_session(&s.session_id);
            s.session_key = [0; 32];
        }
        self.transition(RequesterPhase::Finalized, Some(&env), ctx)
    }

    /// Abort before any provider was chosen: nothing to settle with a peer.
    fn abort_unbound(&mut self, reason: &str, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        self.abort_reason = Some(reason.to_owned());
        self.transition(RequesterPhase::Aborted, None, ctx)?;
        #[derive(Serialize)]
        struct Unbound<'a> {
            outcome: Outcome,
            reason: &'a str,
            #[serde(with = "crate::encoding::hex_bytes")]
            transcript_head: Hash32,
        }
        let body = Unbound { outcome: Outcome::Abort, reason, transcript_head: self.transcript.head };
        self.audit.append(ctx.now, &self.ep.id, "dcu", &body).expect("report encodes");
        self.transition(RequesterPhase::Finalized, None, ctx)
    }
}

impl Agent for RequesterAgent {
    fn id(&self) -> &AgentId {
        &self.ep.id
    }

    fn handle(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let key = self.sender_key(env)?;
        self.ep.admit(env, &key, ctx.now)?;
        match env.msg_type {
            MsgType::CdResponse => self.on_cd_response(env, ctx),
            MsgType::Sso => self.on_sso(env, ctx),
            MsgType::SseConfirm => self.on_sse_confirm(env, ctx),
            MsgType::Abort if self.phase == RequesterPhase::SessionsRequested => self.on_session_abort(env, ctx),
            MsgType::Abort if self.phase == RequesterPhase::Agreed && self.is_selected(env) => {
                let body: Decision = decode(env)?;
                self.transcript.push(env);
                let reason = format!("provider: {}", body.reason.unwrap_or_default());
                self.abort_selected(&reason, Some(env), ctx)
            }
            MsgType::Bc => self.on_bc(env, ctx),
            MsgType::ExecResult => self.on_exec_result(env, ctx),
            other => Err(NegotiationError::illegal(self.phase, format!("requester does not accept {other}"))),
        }
    }

    fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        match (timer, self.phase) {
            (Timer::Discovery, RequesterPhase::Init) => self.abort_unbound("discovery_timeout", ctx),
            (Timer::Sessions, RequesterPhase::SessionsRequested) => {
                let peers: Vec<AgentId> = self.pending.keys().cloned().collect();
                for peer in peers {
                    self.fail_session(&peer, "session_timeout", true, ctx);
                }
                self.close_session_phase(ctx)
            }
            (Timer::Bind, RequesterPhase::Agreed) => self.abort_selected("bind_timeout", None, ctx),
            (Timer::ExecDeadline, RequesterPhase::Executing) => self.abort_selected("deadline", None, ctx),
            _ => Ok(()),
        }
    }

    fn audit(&self) -> &AuditLog {
        &self.audit
    }

    fn state_digest(&self) -> Hash32 {
        let view = DigestView {
            phase: self.phase,
            shortlist: &self.shortlist,
            sessions: self.sessions.iter().collect(),
            pending: self.pending.iter().map(|(k, p)| (k, p.awaiting_confirm.is_some())).collect(),
            failures: &self.failures,
            selected: &self.selected,
            draft: &self.draft,
            binding: &self.binding,
            result: &self.result,
            outcome: &self.outcome,
            transcript: &self.transcript,
            accepts_sent: self.accepts_sent,
            bindings_formed: self.bindings_formed,
        };
        sha3(&canonical_encode(&view).expect("state encodes"))
    }
}
