use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::commitment::BindingCommitment;
use super::endpoint::{decode, open_sealed, Endpoint};
use super::messages::*;
use super::phase::{ProviderPhase, TransitionTable};
use super::skill::{run_skill, SkillProfile};
use super::{Agent, Ctx, NegotiationError, SessionRecord, Timer, Transcript, TransitionEvent};
use crate::audit::AuditLog;
use crate::crypto::{derive_session_key, sha3, EphemeralSecret, Hash32, KeyPair, PublicKey};
use crate::encoding::canonical_encode;
use crate::envelope::{MsgType, SessionId, SignedEnvelope};
use crate::model::{negotiate_extension, AgentId, Anri, NegotiatedExtension, ProtocolExtension};
use crate::registry::{updated_reputation, Outcome, OutcomeReport, TokenBucket};

/// Deliberate misbehaviour, for exercising the requester's checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderBehaviour {
    /// Countersign a commitment with a lowered price.
    #[serde(default)]
    pub tamper_terms: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub extension: ProtocolExtension,
    #[serde(default)]
    pub skill: SkillProfile,
    #[serde(default = "default_capacity")]
    pub ssr_capacity: f64,
    #[serde(default = "default_refill")]
    pub ssr_refill_per_sec: f64,
    #[serde(default)]
    pub behaviour: ProviderBehaviour,
    /// Quiet period after which an open negotiation is abandoned. While
    /// bound, the period counts from the commitment deadline.
    #[serde(default = "default_idle")]
    pub idle_ms: u64,
}

fn default_capacity() -> f64 {
    5.0
}

fn default_refill() -> f64 {
    1.0
}

fn default_idle() -> u64 {
    60_000
}

/// One negotiation as seen by the provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderInstance {
    pub requester: AgentId,
    pub phase: ProviderPhase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionRecord>,
    pub negotiated: NegotiatedExtension,
    pub commitment: Option<BindingCommitment>,
    pub transcript: Transcript,
    pub failure: Option<String>,
    pub report: Option<OutcomeReport>,
    /// Reputation stored by the registry, or the error it returned.
    pub registry_update: Option<Result<f64, String>>,
    #[serde(skip)]
    key: [u8; 32],
    #[serde(skip)]
    requester_key: Option<PublicKey>,
    #[serde(skip)]
    peer_extension: Option<ProtocolExtension>,
    #[serde(skip)]
    exec_input: Option<BTreeMap<String, String>>,
    #[serde(skip)]
    result_sent: bool,
    #[serde(skip)]
    idle_at: u64,
}

pub struct ProviderAgent {
    ep: Endpoint,
    anri: Anri,
    cfg: ProviderConfig,
    table: &'static TransitionTable,
    bucket: TokenBucket,
    instances: BTreeMap<SessionId, ProviderInstance>,
    audit: AuditLog,
}

#[derive(Serialize)]
struct DcuEntry<'a> {
    report: &'a OutcomeReport,
    registry: &'a Result<f64, String>,
}

impl ProviderAgent {
    pub fn new(id: AgentId, key: KeyPair, rng_seed: [u8; 32], anri: Anri, cfg: ProviderConfig, now: u64) -> Self {
        let bucket = TokenBucket::new(cfg.ssr_capacity, cfg.ssr_refill_per_sec, now);
        ProviderAgent {
            ep: Endpoint::new(id, key, rng_seed),
            anri,
            cfg,
            table: TransitionTable::provider(),
            bucket,
            instances: BTreeMap::new(),
            audit: AuditLog::new(),
        }
    }

    pub fn anri(&self) -> &Anri {
        &self.anri
    }
    pub fn public_key(&self) -> PublicKey {
        self.ep.public_key()
    }
    pub fn instances(&self) -> &BTreeMap<SessionId, ProviderInstance> {
        &self.instances
    }

    /// Phase of the most recent negotiation, or REGISTERED if none.
    pub fn latest_phase(&self) -> ProviderPhase {
        self.instances
            .values()
            .filter(|i| i.phase != ProviderPhase::Registered)
            .map(|i| i.phase)
            .max_by_key(|p| match p {
                ProviderPhase::Done => 3,
                ProviderPhase::Aborted => 2,
                _ => 1,
            })
            .unwrap_or(ProviderPhase::Registered)
    }

    fn transition(
        &mut self,
        session: SessionId,
        to: ProviderPhase,
        env: Option<&SignedEnvelope>,
        ctx: &mut Ctx<'_>,
    ) -> Result<(), NegotiationError> {
        let from = self.instances.get(&session).map_or(ProviderPhase::Registered, |i| i.phase);
        if !self.table.allows(from.as_str(), to.as_str()) {
            return Err(NegotiationError::InvariantBreach(format!("provider {from} -> {to}")));
        }
        if let Some(i) = self.instances.get_mut(&session) {
            i.phase = to;
            if !self.table.is_terminal(to.as_str()) && to != ProviderPhase::Rejected {
                let base = i.commitment.as_ref().map_or(ctx.now, |c| c.terms.deadline_ms.max(ctx.now));
                i.idle_at = base + self.cfg.idle_ms;
                ctx.out.timers.push((i.idle_at, Timer::Idle(session)));
            }
        }
        let ev = TransitionEvent {
            time_ms: ctx.now,
            instance_id: session,
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

    fn send(&mut self, session: SessionId, env: SignedEnvelope, ctx: &mut Ctx<'_>) {
        if let Some(i) = self.instances.get_mut(&session) {
            i.transcript.push(&env);
        }
        ctx.out.send.push(env);
    }

    fn record(&mut self, env: &SignedEnvelope) {
        if let Some(i) = self.instances.get_mut(&env.session_id) {
            i.transcript.push(env);
        }
    }

    fn abort_instance(
        &mut self,
        session: SessionId,
        reason: &str,
        env: Option<&SignedEnvelope>,
        ctx: &mut Ctx<'_>,
    ) -> Result<(), NegotiationError> {
        let peer = self.instances[&session].requester.clone();
        let out = self.ep.envelope(&peer, session, MsgType::Abort, &Decision { reason: Some(reason.into()) }, ctx.now);
        self.send(session, out, ctx);
        self.instances.get_mut(&session).expect("known").failure = Some(reason.into());
        self.transition(session, ProviderPhase::Aborted, env, ctx)
    }

    fn instance(&self, env: &SignedEnvelope, phases: &[ProviderPhase]) -> Result<&ProviderInstance, NegotiationError> {
        match self.instances.get(&env.session_id) {
            Some(i) if i.requester == env.sender && phases.contains(&i.phase) => Ok(i),
            Some(i) => Err(NegotiationError::illegal(i.phase, format!("{} not expected", env.msg_type))),
            None => Err(NegotiationError::illegal(ProviderPhase::Registered, format!("{} without session", env.msg_type))),
        }
    }

    /// Answers a session request with an offer.
    pub fn handle_ssr(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        if self.instances.contains_key(&env.session_id) {
            return Err(NegotiationError::illegal(self.instances[&env.session_id].phase, "SSR for known session"));
        }
        let body: Ssr = decode(env)?;
        if body.requester != env.sender {
            return Err(NegotiationError::Malformed("SSR requester differs from sender".into()));
        }
        let negotiated = match negotiate_extension(&self.cfg.extension, &body.extension) {
            Ok(n) => n,
            Err(_) => {
                let reason = Decision { reason: Some("IncompatibleVersions".into()) };
                let out = self.ep.envelope(&env.sender, env.session_id, MsgType::Abort, &reason, ctx.now);
                ctx.out.send.push(out);
                return Err(NegotiationError::IncompatibleVersions);
            }
        };
        let eph = EphemeralSecret::from_bytes(self.ep.random());
        let nonce_p: [u8; 16] = self.ep.random();
        let shared = eph.agree(&body.security.ephemeral_public);
        let key = derive_session_key(&shared, &body.security.nonce, &nonce_p);
        let mut inst = ProviderInstance {
            requester: env.sender.clone(),
            phase: ProviderPhase::Registered,
            session: None,
            negotiated,
            commitment: None,
            transcript: Transcript::default(),
            failure: None,
            report: None,
            registry_update: None,
            key,
            requester_key: ctx.registry.public_key_of(&env.sender),
            peer_extension: Some(body.extension),
            exec_input: None,
            result_sent: false,
            idle_at: 0,
        };
        inst.transcript.push(env);
        self.instances.insert(env.session_id, inst);
        let offer = Sso {
            provider: self.ep.id.clone(),
            capabilities: self.anri.capabilities.clone(),
            certificate: self.anri.security.certificate.clone(),
            extension: self.cfg.extension.clone(),
            security: SecurityParams {
                ephemeral_public: eph.public(),
                nonce: nonce_p,
                encryption_level: self
                    .anri
                    .capabilities
                    .iter()
                    .map(|c| c.security.encryption_level)
                    .max()
                    .expect("registered records have capabilities"),
            },
            ssr_hash: env.hash(),
        };
        let out = self.ep.envelope(&env.sender, env.session_id, MsgType::Sso, &offer, ctx.now);
        self.send(env.session_id, out, ctx);
        self.transition(env.session_id, ProviderPhase::OfferSent, Some(env), ctx)
    }

    fn on_sse_init(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let inst = self.instance(env, &[ProviderPhase::OfferSent])?;
        let key = inst.key;
        let peer_ext = inst.peer_extension.clone().expect("set at SSR");
        let negotiated = inst.negotiated.clone();
        let s = env.session_id;
        let body: SseInit = match open_sealed(env, &key) {
            Ok(b) => b,
            Err(NegotiationError::KeyConfirmationFailed) => {
                self.record(env);
                return self.abort_instance(s, "KeyConfirmationFailed", Some(env), ctx);
            }
            Err(e) => return Err(e),
        };
        self.record(env);
        let honest = body.peer_list_hash == self.cfg.extension.advertisement_hash()
            && body.own_list_hash == peer_ext.advertisement_hash()
            && body.negotiated == negotiated;
        if !honest {
            return self.abort_instance(s, "DowngradeDetected", Some(env), ctx);
        }
        let record = SessionRecord {
            session_id: s,
            negotiated: negotiated.clone(),
            session_key: key,
            peer_extension_list_hash: peer_ext.advertisement_hash(),
            established_at: ctx.now,
        };
        self.instances.get_mut(&s).expect("known").session = Some(record);
        let confirm = SseConfirm {
            negotiated,
            peer_list_hash: peer_ext.advertisement_hash(),
            own_list_hash: self.cfg.extension.advertisement_hash(),
        };
        let peer = env.sender.clone();
        let out = self.ep.encrypted(&peer, s, MsgType::SseConfirm, &key, &confirm, ctx.now);
        self.send(s, out, ctx);
        self.transition(s, ProviderPhase::SessionEstablished, Some(env), ctx)
    }

    fn on_ssa_reject(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        self.instance(env, &[ProviderPhase::SessionEstablished])?;
        let _: SsaReject = decode(env)?;
        self.record(env);
        let s = env.session_id;
        self.transition(s, ProviderPhase::Rejected, Some(env), ctx)?;
        self.transition(s, ProviderPhase::Registered, None, ctx)?;
        self.ep.forget_session(&s);
        Ok(())
    }

    /// Countersigns an accepted draft and returns it in a BC message.
    pub fn bind(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let inst = self.instance(env, &[ProviderPhase::SessionEstablished])?;
        let requester_key = inst.requester_key;
        let body: SsaAccept = decode(env)?;
        self.record(env);
        let s = env.session_id;
        let d = &body.draft;
        let problem = if d.requester != env.sender || d.provider != self.ep.id {
            Some("wrong_parties")
        } else if !requester_key.is_some_and(|k| d.requester_signature_valid(&k)) {
            Some("SignatureInvalid")
        } else if !self.anri.capabilities.contains(&d.capability) {
            Some("unknown_capability")
        } else if d.terms.deadline_ms <= ctx.now {
            Some("DeadlineExceeded")
        } else {
            None
        };
        self.transition(s, ProviderPhase::Accepted, Some(env), ctx)?;
        if let Some(reason) = problem {
            return self.abort_instance(s, reason, None, ctx);
        }
        let mut commitment = body.draft;
        if self.cfg.behaviour.tamper_terms {
            commitment.terms.price *= 0.9;
        }
        commitment.sign_as_provider(self.ep.signer());
        self.instances.get_mut(&s).expect("known").commitment = Some(commitment.clone());
        let peer = env.sender.clone();
        let out = self.ep.envelope(&peer, s, MsgType::Bc, &Bc { commitment }, ctx.now);
        self.send(s, out.clone(), ctx);
        self.transition(s, ProviderPhase::Committed, Some(&out), ctx)
    }

    fn on_exec_request(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let inst = self.instance(env, &[ProviderPhase::Committed])?;
        let req: ExecRequest = open_sealed(env, &inst.key)?;
        let commitment = inst.commitment.clone().expect("COMMITTED holds a commitment");
        self.record(env);
        let s = env.session_id;
        self.transition(s, ProviderPhase::Executing, Some(env), ctx)?;
        let slots: BTreeSet<&str> = commitment.capability.input.iter().map(|x| x.name.as_str()).collect();
        let got: BTreeSet<&str> = req.input.keys().map(String::as_str).collect();
        if slots != got {
            return self.send_result(s, Err(NegotiationError::SlotMismatch), ctx);
        }
        self.instances.get_mut(&s).expect("known").exec_input = Some(req.input);
        ctx.out.timers.push((ctx.now + self.cfg.skill.processing_ms, Timer::ExecDone(s)));
        Ok(())
    }

    fn send_result(
        &mut self,
        s: SessionId,
        outcome: Result<BTreeMap<String, String>, NegotiationError>,
        ctx: &mut Ctx<'_>,
    ) -> Result<(), NegotiationError> {
        let inst = self.instances.get_mut(&s).expect("known");
        inst.result_sent = true;
        let (peer, key) = (inst.requester.clone(), inst.key);
        let result = match outcome {
            Ok(output) => ExecResult { output, quality: self.cfg.skill.quality, error: None },
            Err(e) => ExecResult { output: BTreeMap::new(), quality: 0.0, error: Some(e.name().into()) },
        };
        let out = self.ep.encrypted(&peer, s, MsgType::ExecResult, &key, &result, ctx.now);
        self.send(s, out, ctx);
        Ok(())
    }

    fn on_exec_done(&mut self, s: SessionId, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let Some(inst) = self.instances.get(&s) else { return Ok(()) };
        if inst.phase != ProviderPhase::Executing || inst.result_sent {
            return Ok(());
        }
        let Some(input) = inst.exec_input.clone() else { return Ok(()) };
        let deadline = inst.commitment.as_ref().expect("executing under a commitment").terms.deadline_ms;
        let outcome = if ctx.now > deadline {
            Err(NegotiationError::DeadlineExceeded)
        } else {
            run_skill(self.cfg.skill.skill, &input).map_err(NegotiationError::ExecutionFailure)
        };
        self.send_result(s, outcome, ctx)
    }

    fn on_decision(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let s = env.session_id;
        if env.msg_type == MsgType::Commit {
            self.instance(env, &[ProviderPhase::Executing])?;
            let _: Decision = decode(env)?;
            self.record(env);
            return self.transition(s, ProviderPhase::Done, Some(env), ctx);
        }
        use ProviderPhase::*;
        self.instance(env, &[OfferSent, SessionEstablished, Accepted, Committed, Executing])?;
        let body: Decision = decode(env)?;
        self.record(env);
        self.instances.get_mut(&s).expect("known").failure = Some(body.reason.unwrap_or_else(|| "aborted".into()));
        self.transition(s, Aborted, Some(env), ctx)
    }

    fn on_dcu(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        use ProviderPhase::*;
        let inst = self.instance(env, &[Accepted, Committed, Executing, Done, Aborted])?;
        if inst.commitment.is_none() || inst.report.is_some() {
            return Err(NegotiationError::illegal(inst.phase, "no bound negotiation to settle"));
        }
        let phase = inst.phase;
        let report: OutcomeReport = decode(env)?;
        if report.provider != self.ep.id || report.requester != env.sender || report.session_id != env.session_id {
            return Err(NegotiationError::Malformed("DCU report names other parties".into()));
        }
        if report.outcome == Outcome::Commit && !matches!(phase, Executing | Done) {
            return Err(NegotiationError::illegal(phase, "commit reported before execution"));
        }
        self.record(env);
        let s = env.session_id;
        // The signed report carries the decision, so it settles the instance
        // even when it overtakes the COMMIT or ABORT on the network.
        match (phase, report.outcome) {
            (Executing, Outcome::Commit) => self.transition(s, Done, Some(env), ctx)?,
            (Done | Aborted, _) => {}
            (_, Outcome::Abort) => {
                let reason = report.reason.clone().unwrap_or_else(|| "aborted".into());
                self.instances.get_mut(&s).expect("known").failure = Some(reason);
                self.transition(s, Aborted, Some(env), ctx)?;
            }
            (_, Outcome::Commit) => unreachable!("rejected above"),
        }
        let old = self.anri.metadata.reputation_or_default();
        let new = if report.outcome == Outcome::Commit || report.attributable {
            updated_reputation(old, report.outcome)
        } else {
            old
        };
        let mut resigned = self.anri.clone();
        resigned.metadata.reputation = Some(new);
        resigned.sign(self.ep.signer()).expect("record encodes");
        let update = match ctx.registry.apply_outcome(env, resigned.clone()) {
            Ok(rep) => {
                self.anri = resigned;
                Ok(rep)
            }
            Err(e) => Err(e.name().to_owned()),
        };
        self.audit
            .append(ctx.now, &self.ep.id, "dcu", &DcuEntry { report: &report, registry: &update })
            .expect("dcu entry encodes");
        let inst = self.instances.get_mut(&s).expect("known");
        inst.report = Some(report);
        inst.registry_update = Some(update);
        inst.key = [0; 32];
        if let Some(sess) = inst.session.as_mut() {
            sess.session_key = [0; 32];
        }
        self.ep.forget_session(&s);
        if self.instances[&s].phase == ProviderPhase::Aborted {
            self.transition(s, ProviderPhase::Done, Some(env), ctx)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct DigestView<'a> {
    record: String,
    instances: &'a BTreeMap<SessionId, ProviderInstance>,
    results: Vec<bool>,
}

impl Agent for ProviderAgent {
    fn id(&self) -> &AgentId {
        &self.ep.id
    }

    fn handle(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        let key = match self.instances.get(&env.session_id).and_then(|i| i.requester_key) {
            Some(k) if self.instances[&env.session_id].requester == env.sender => k,
            _ => ctx.registry.public_key_of(&env.sender).ok_or_else(|| NegotiationError::UnknownPeer(env.sender.clone()))?,
        };
        self.ep.admit(env, &key, ctx.now)?;
        // Metered after the replay check so replays cannot drain the bucket.
        if env.msg_type == MsgType::Ssr && !self.bucket.try_take(ctx.now) {
            return Err(NegotiationError::RateLimited);
        }
        match env.msg_type {
            MsgType::Ssr => self.handle_ssr(env, ctx),
            MsgType::SseInit => self.on_sse_init(env, ctx),
            MsgType::SsaAccept => self.bind(env, ctx),
            MsgType::SsaReject => self.on_ssa_reject(env, ctx),
            MsgType::ExecRequest => self.on_exec_request(env, ctx),
            MsgType::Commit | MsgType::Abort => self.on_decision(env, ctx),
            MsgType::Dcu => self.on_dcu(env, ctx),
            other => Err(NegotiationError::illegal(self.latest_phase(), format!("provider does not accept {other}"))),
        }
    }

    fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        match timer {
            Timer::ExecDone(s) => self.on_exec_done(s, ctx),
            Timer::Idle(s) => {
                let Some(i) = self.instances.get_mut(&s) else { return Ok(()) };
                if ctx.now < i.idle_at || self.table.is_terminal(i.phase.as_str()) {
                    return Ok(());
                }
                i.failure = Some("idle_timeout".into());
                self.transition(s, ProviderPhase::Aborted, None, ctx)
            }
            _ => Ok(()),
        }
    }

    fn audit(&self) -> &AuditLog {
        &self.audit
    }

    fn state_digest(&self) -> Hash32 {
        let view = DigestView {
            record: hex::encode(self.anri.record_hash()),
            instances: &self.instances,
            results: self.instances.values().map(|i| i.result_sent).collect(),
        };
        sha3(&canonical_encode(&view).expect("state encodes"))
    }
}
