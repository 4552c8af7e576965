//! Deterministic discrete-event simulation.
//!
//! All agents share one virtual clock. Envelopes travel over a simulated
//! network with per-link latency, loss and duplication drawn from a
//! generator seeded per `(seed, link, index)`, so adding traffic on one link
//! never perturbs another. Events run in `(time_ms, insertion order)`.

mod adversary;
mod ans;
mod report;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::audit::AuditLog;
use crate::cert::CertificateAuthority;
use crate::clock::VirtualClock;
use crate::crypto::{sha3, KeyPair, PublicKey};
use crate::encoding::canonical_encode;
use crate::envelope::{SessionId, SignedEnvelope};
use crate::fixture;
use crate::model::{AgentId, Anri, CapabilityQuery, EncryptionLevel, OntologyPath};
use crate::negotiation::{
    agent_rng_seed, Agent, Ctx, Effects, NegotiationError, ProviderAgent, ProviderConfig, RequesterAgent,
    RequesterConfig, Timer, TransitionTable,
};
use crate::registry::{Registry, RegistryConfig};

pub use adversary::{AdversarySpec, DowngradeMode, Link};
pub use ans::AnsNode;
pub use report::{
    FloodSummary, InjectionOutcome, InstanceSummary, ProviderSummary, RegistrationRecord, Rejection,
    RequesterSummary, SimReport, TamperRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    /// Inclusive `(min, max)` one-way latency.
    #[serde(default = "default_latency")]
    pub latency_ms: (u64, u64),
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub duplicate_prob: f64,
    #[serde(default)]
    pub adversaries: Vec<AdversarySpec>,
    /// Events later than `start + horizon_ms` are not processed.
    #[serde(default = "default_horizon")]
    pub horizon_ms: u64,
}

fn default_latency() -> (u64, u64) {
    (10, 50)
}

fn default_horizon() -> u64 {
    7 * 24 * 3_600_000
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            latency_ms: default_latency(),
            drop_prob: 0.0,
            duplicate_prob: 0.0,
            adversaries: Vec::new(),
            horizon_ms: default_horizon(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        for (name, p) in [("drop_prob", self.drop_prob), ("duplicate_prob", self.duplicate_prob)] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.latency_ms.0 > self.latency_ms.1 {
            errs.push(format!("latency min {} exceeds max {}", self.latency_ms.0, self.latency_ms.1));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario invalid: {}", .0.join("; "))]
    ScenarioInvalid(Vec<String>),
}

/// Everything a run needs besides its configuration.
pub struct World {
    pub start_ms: u64,
    pub run_seed: u64,
    pub clock: VirtualClock,
    pub ca: CertificateAuthority,
    pub registry: Registry,
    ans: AnsNode,
    requester: Option<RequesterAgent>,
    requester_start_ms: u64,
    providers: BTreeMap<AgentId, ProviderAgent>,
    keys: BTreeMap<AgentId, KeyPair>,
    scheduled: Vec<(u64, Anri, Vec<u8>)>,
    registrations: Vec<RegistrationRecord>,
}

impl World {
    pub fn new(start_ms: u64, run_seed: u64, ca: CertificateAuthority, registry: RegistryConfig) -> Self {
        let clock = VirtualClock::new(start_ms);
        let ans_id = Self::ans_id();
        let ans_key = KeyPair::from_seed(format!("acnbp/ans/{}", ca.name()).as_bytes());
        World {
            start_ms,
            run_seed,
            registry: Registry::new(ca.root(), registry, clock.clone()),
            ans: AnsNode::new(ans_id.clone(), ans_key, agent_rng_seed(run_seed, &ans_id)),
            clock,
            ca,
            requester: None,
            requester_start_ms: 0,
            providers: BTreeMap::new(),
            keys: BTreeMap::new(),
            scheduled: Vec::new(),
            registrations: Vec::new(),
        }
    }

    pub fn ans_id() -> AgentId {
        fixture::agent_id("ANS", "acnbp.infra")
    }

    pub fn ans_key(&self) -> PublicKey {
        self.ans.public_key()
    }

    pub fn key_of(&self, id: &AgentId) -> Option<&KeyPair> {
        self.keys.get(id)
    }

    /// Registers now, or at `start + offset` if `offset` is given.
    pub fn register(&mut self, anri: Anri, pow: Vec<u8>, offset: Option<u64>) {
        match offset {
            Some(o) if o > 0 => self.scheduled.push((self.start_ms + o, anri, pow)),
            _ => {
                let t = self.clock.now_ms();
                let id = anri.id.clone();
                let result = self.registry.register(anri, &pow).map(|_| ()).map_err(|e| e.name());
                self.registrations.push(RegistrationRecord::new(t, id, result));
            }
        }
    }

    pub fn add_provider(&mut self, anri: Anri, key: KeyPair, cfg: ProviderConfig) {
        let id = anri.id.clone();
        let seed = agent_rng_seed(self.run_seed, &id);
        self.keys.insert(id.clone(), key.clone());
        self.providers.insert(id.clone(), ProviderAgent::new(id, key, seed, anri, cfg, self.start_ms));
    }

    pub fn set_requester(&mut self, id: AgentId, key: KeyPair, cfg: RequesterConfig, start_offset_ms: u64) {
        let seed = agent_rng_seed(self.run_seed, &id);
        self.keys.insert(id.clone(), key.clone());
        let ans_key = self.ans_key();
        let root = self.ca.root();
        self.requester = Some(RequesterAgent::new(id, key, seed, cfg, Self::ans_id(), ans_key, root));
        self.requester_start_ms = start_offset_ms;
    }

    /// Registers a key without an agent, for records that only sit in the
    /// directory.
    pub fn add_key(&mut self, id: AgentId, key: KeyPair) {
        self.keys.insert(id, key);
    }

    pub fn requester(&self) -> Option<&RequesterAgent> {
        self.requester.as_ref()
    }

    pub fn provider(&self, id: &AgentId) -> Option<&ProviderAgent> {
        self.providers.get(id)
    }

    /// The agent named `id` together with the registry, borrowed apart.
    fn agent_mut(&mut self, id: &AgentId) -> Option<(&mut dyn Agent, &mut Registry)> {
        let reg = &mut self.registry;
        if *id == Self::ans_id() {
            return Some((&mut self.ans, reg));
        }
        if let Some(r) = self.requester.as_mut().filter(|r| r.id() == id) {
            return Some((r, reg));
        }
        self.providers.get_mut(id).map(|p| (p as &mut dyn Agent, reg))
    }

    fn agent_ids(&self) -> Vec<AgentId> {
        let mut ids: Vec<AgentId> = self.providers.keys().cloned().collect();
        ids.extend(self.requester.as_ref().map(|r| r.id().clone()));
        ids.push(Self::ans_id());
        ids
    }
}

/// Result of a run: the summary, the NDJSON trace and every agent's audit
/// log.
pub struct SimOutput {
    pub report: SimReport,
    pub trace: Vec<u8>,
    pub audits: BTreeMap<AgentId, AuditLog>,
    pub world: World,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Network,
    Duplicate,
    Injected(usize),
}

enum Event {
    Start,
    Deliver { env: SignedEnvelope, origin: Origin },
    Timer { agent: AgentId, timer: Timer },
    Register { anri: Box<Anri>, pow: Vec<u8> },
    Flood { adversary: usize, step: u32 },
}

/// Seed for the `index`-th draw on the link `from -> to`.
fn link_seed(seed: u64, from: &AgentId, to: &AgentId, index: u64) -> [u8; 32] {
    let mut buf = b"acnbp/link/v1".to_vec();
    buf.extend_from_slice(&seed.to_be_bytes());
    buf.extend_from_slice(&canonical_encode(&(from, to)).expect("ids encode"));
    buf.extend_from_slice(&index.to_be_bytes());
    sha3(&buf)
}

struct Sim<'c> {
    cfg: &'c SimConfig,
    world: World,
    queue: BTreeMap<(u64, u64), Event>,
    next_seq: u64,
    link_index: BTreeMap<(AgentId, AgentId), u64>,
    impostor_key: KeyPair,
    flooders: BTreeMap<usize, (Anri, Vec<u8>)>,
    trace: Vec<u8>,
    trace_index: u64,
    report: SimReport,
}

impl<'c> Sim<'c> {
    fn schedule(&mut self, at: u64, ev: Event) {
        self.queue.insert((at, self.next_seq), ev);
        self.next_seq += 1;
    }

    fn log(&mut self, time_ms: u64, kind: &str, detail: serde_json::Value) {
        let line = json!({ "index": self.trace_index, "time_ms": time_ms, "kind": kind, "detail": detail });
        self.trace.extend(canonical_encode(&line).expect("trace lines encode"));
        self.trace.push(b'\n');
        self.trace_index += 1;
    }

    fn env_summary(env: &SignedEnvelope) -> serde_json::Value {
        json!({
            "from": env.sender,
            "to": env.recipient,
            "msg_type": env.msg_type,
            "session": env.session_id,
            "hash": hex::encode(env.hash()),
        })
    }

    fn apply(&mut self, agent: &AgentId, out: Effects, now: u64) {
        for tr in out.transitions {
            self.log(now, "transition", serde_json::to_value(&tr).expect("transition encodes"));
        }
        for (at, timer) in out.timers {
            self.schedule(at, Event::Timer { agent: agent.clone(), timer });
        }
        for env in out.send {
            self.transmit(env, now);
        }
    }

    fn transmit(&mut self, mut env: SignedEnvelope, now: u64) {
        self.log(now, "send", Self::env_summary(&env));
        for (i, spec) in self.cfg.adversaries.iter().enumerate() {
            let hit = adversary::intercept(spec, &env, &self.world.keys, &self.impostor_key);
            if let Some(forged) = hit.rewritten {
                self.report.tampering.push(TamperRecord {
                    adversary: spec.kind().into(),
                    session_id: env.session_id,
                    from: env.sender.clone(),
                    to: env.recipient.clone(),
                    msg_type: env.msg_type,
                });
                self.log(now, "adversary_action", json!({"adversary": spec.kind(), "action": "rewrite", "envelope": Self::env_summary(&forged)}));
                env = forged;
            }
            for (delay, inj) in hit.inject {
                self.log(now, "adversary_action", json!({"adversary": spec.kind(), "action": "inject", "delay_ms": delay, "envelope": Self::env_summary(&inj)}));
                self.report.injected += 1;
                self.schedule(now + delay, Event::Deliver { env: inj, origin: Origin::Injected(i) });
            }
        }
        let link = (env.sender.clone(), env.recipient.clone());
        let k = self.link_index.entry(link.clone()).or_insert(0);
        let index = *k;
        *k += 1;
        let mut rng = ChaCha20Rng::from_seed(link_seed(self.cfg.seed, &link.0, &link.1, index));
        let (lo, hi) = self.cfg.latency_ms;
        let dropped = rng.gen::<f64>() < self.cfg.drop_prob;
        let latency = rng.gen_range(lo..=hi);
        let duplicate = rng.gen::<f64>() < self.cfg.duplicate_prob;
        let dup_latency = rng.gen_range(lo..=hi);
        if dropped {
            self.report.dropped += 1;
            self.log(now, "drop", Self::env_summary(&env));
            return;
        }
        if duplicate {
            self.report.duplicated += 1;
            self.schedule(now + dup_latency, Event::Deliver { env: env.clone(), origin: Origin::Duplicate });
        }
        self.schedule(now + latency, Event::Deliver { env, origin: Origin::Network });
    }

    fn deliver(&mut self, env: SignedEnvelope, origin: Origin, now: u64) {
        let to = env.recipient.clone();
        let Some((agent, registry)) = self.world.agent_mut(&to) else {
            self.report.undeliverable += 1;
            self.log(now, "deliver", json!({"envelope": Self::env_summary(&env), "result": "NoSuchAgent"}));
            return;
        };
        let before = agent.state_digest();
        let mut out = Effects::default();
        let result = {
            let mut ctx = Ctx { now, registry, out: &mut out };
            agent.handle(&env, &mut ctx)
        };
        let after = agent.state_digest();
        self.report.delivered += 1;
        let result_name = match &result {
            Ok(()) => "ok",
            Err(e) => e.name(),
        };
        let origin_name = match origin {
            Origin::Network => "network",
            Origin::Duplicate => "duplicate",
            Origin::Injected(_) => "injected",
        };
        self.log(
            now,
            "deliver",
            json!({"envelope": Self::env_summary(&env), "origin": origin_name, "result": result_name}),
        );
        if let Err(e) = &result {
            self.report.rejections.push(Rejection {
                time_ms: now,
                from: env.sender.clone(),
                to: to.clone(),
                msg_type: env.msg_type,
                error: e.name().into(),
                origin: origin_name.into(),
            });
            if let NegotiationError::InvariantBreach(d) = e {
                self.report.invariant_breaches.push(format!("{to}: {d}"));
            }
        }
        if let Origin::Injected(i) = origin {
            self.report.injections.push(InjectionOutcome {
                adversary: self.cfg.adversaries[i].kind().into(),
                time_ms: now,
                to: to.clone(),
                msg_type: env.msg_type,
                result: result_name.into(),
                replay_rejected: result.as_ref().err().is_some_and(NegotiationError::is_replay),
                state_changed: before != after,
            });
        }
        self.apply(&to, out, now);
    }

    fn fire(&mut self, agent_id: AgentId, timer: Timer, now: u64) {
        self.log(now, "timer", json!({"agent": agent_id, "timer": timer}));
        let Some((agent, registry)) = self.world.agent_mut(&agent_id) else { return };
        let mut out = Effects::default();
        let result = {
            let mut ctx = Ctx { now, registry, out: &mut out };
            agent.on_timer(timer, &mut ctx)
        };
        if let Err(NegotiationError::InvariantBreach(d)) = &result {
            self.report.invariant_breaches.push(format!("{agent_id}: {d}"));
        }
        self.apply(&agent_id, out, now);
    }

    fn start(&mut self, now: u64) {
        let Some(req) = self.world.requester.as_mut() else { return };
        let id = req.id().clone();
        let mut out = Effects::default();
        let result = {
            let mut ctx = Ctx { now, registry: &mut self.world.registry, out: &mut out };
            req.start(&mut ctx)
        };
        self.log(now, "start", json!({"agent": id, "result": result.as_ref().map_or_else(|e| e.name(), |_| "ok")}));
        if let Err(NegotiationError::InvariantBreach(d)) = &result {
            self.report.invariant_breaches.push(format!("{id}: {d}"));
        }
        self.apply(&id, out, now);
    }

    fn register(&mut self, anri: Anri, pow: Vec<u8>, now: u64) {
        let id = anri.id.clone();
        let result = self.world.registry.register(anri, &pow).map(|_| ()).map_err(|e| e.name());
        let rec = RegistrationRecord::new(now, id, result);
        self.log(now, "register", serde_json::to_value(&rec).expect("record encodes"));
        self.world.registrations.push(rec);
    }

    fn flood(&mut self, adversary: usize, step: u32, now: u64) {
        let AdversarySpec::Flooder { registrations, queries, valid_pow, .. } = self.cfg.adversaries[adversary] else {
            return;
        };
        let flooder = fixture::agent_id(&format!("Flooder{adversary}"), "acnbp.adversary");
        self.report
            .flood
            .entry(adversary)
            .or_insert_with(|| FloodSummary { flooder: Some(flooder.clone()), ..FloodSummary::default() });
        let mut actions = Vec::new();
        if step < registrations {
            let (anri, pow) = self.flooder_record(adversary, &flooder, valid_pow);
            let r = self.world.registry.register(anri, &pow);
            let name = r.as_ref().map_or_else(|e| e.name(), |_| "ok");
            let summary = self.report.flood.get_mut(&adversary).expect("inserted above");
            *summary.registrations.entry(name.into()).or_insert(0) += 1;
            actions.push(json!({"op": "register", "result": name}));
        }
        if step < queries {
            let q = CapabilityQuery::new(OntologyPath::new(["spam"]).expect("valid path"));
            let r = self.world.registry.query_as(&flooder, &q, 8);
            let name = r.as_ref().map_or_else(|e| e.name(), |_| "ok");
            let summary = self.report.flood.get_mut(&adversary).expect("inserted above");
            *summary.queries.entry(name.into()).or_insert(0) += 1;
            actions.push(json!({"op": "query", "result": name}));
        }
        self.log(now, "adversary_action", json!({"adversary": "FLOODER", "step": step, "actions": actions}));
    }

    /// The flooder's record and puzzle answer, built once per adversary.
    fn flooder_record(&mut self, adversary: usize, id: &AgentId, valid_pow: bool) -> (Anri, Vec<u8>) {
        let start = self.world.start_ms;
        let world = &self.world;
        self.flooders
            .entry(adversary)
            .or_insert_with(|| {
                let key = KeyPair::from_seed(format!("acnbp/flooder/{adversary}").as_bytes());
                let cap = fixture::capability(&["spam", "bulk"], EncryptionLevel::None, &[], false, &[]);
                let meta = fixture::metadata(None, 0.0, start, 3_600_000);
                let anri = fixture::signed_anri(&world.ca, &key, id.clone(), vec![cap], "sim://flooder", meta);
                let pow = if valid_pow {
                    fixture::registration_pow(&anri, world.registry.config().pow_difficulty)
                } else {
                    fixture::failing_pow(&anri, world.registry.config().pow_difficulty)
                };
                (anri, pow)
            })
            .clone()
    }

    fn finish(mut self, end_ms: u64, truncated: bool) -> SimOutput {
        let w = &self.world;
        let r = &mut self.report;
        r.seed = self.cfg.seed;
        r.end_ms = end_ms;
        r.truncated = truncated;
        r.registrations = w.registrations.clone();
        let rt = TransitionTable::requester();
        let pt = TransitionTable::provider();
        if let Some(req) = &w.requester {
            let s = RequesterSummary::of(req);
            if !rt.is_terminal(s.phase.as_str()) {
                r.nonterminal.push(format!("{}: {}", req.id(), s.phase));
            }
            if let Some(b) = req.binding() {
                r.commitments_verified &= self::commitment_ok(b, &w.keys);
            }
            r.requester = Some(s);
        }
        for (id, p) in &w.providers {
            let s = ProviderSummary::of(p);
            for (sid, inst) in p.instances() {
                if !pt.is_terminal(inst.phase.as_str()) {
                    r.nonterminal.push(format!("{id} {}: {}", hex::encode(sid.0), inst.phase));
                }
                if let (Some(c), None) = (&inst.commitment, &inst.failure) {
                    r.commitments_verified &= self::commitment_ok(c, &w.keys);
                }
            }
            r.providers.insert(id.clone(), s);
        }
        let mut audits = BTreeMap::new();
        for id in w.agent_ids() {
            let log = match &id {
                a if *a == World::ans_id() => w.ans.audit().clone(),
                a if w.requester.as_ref().is_some_and(|q| q.id() == a) => {
                    w.requester.as_ref().expect("checked").audit().clone()
                }
                a => w.providers[a].audit().clone(),
            };
            r.audit_valid &= log.verify().valid;
            r.audit_heads.insert(id.clone(), hex::encode(log.head()));
            audits.insert(id, log);
        }
        for id in w.keys.keys() {
            if let Some(a) = w.registry.stored(id) {
                r.reputations.insert(id.clone(), a.metadata.reputation_or_default());
            }
        }
        r.live_agents = w.registry.live_ids();
        r.registry_digest = hex::encode(w.registry.digest());
        let report = self.report;
        SimOutput { report, trace: self.trace, audits, world: self.world }
    }
}

fn commitment_ok(c: &crate::negotiation::BindingCommitment, keys: &BTreeMap<AgentId, KeyPair>) -> bool {
    match (keys.get(&c.requester), keys.get(&c.provider)) {
        (Some(rk), Some(pk)) => c.requester_signature_valid(&rk.public()) && c.provider_signature_valid(&pk.public()),
        _ => false,
    }
}

/// Checks that every adversary refers to a known agent.
pub fn validate_adversaries(cfg: &SimConfig, known: &[AgentId]) -> Vec<String> {
    let mut errs = Vec::new();
    for (i, a) in cfg.adversaries.iter().enumerate() {
        for id in a.referenced_agents() {
            if !known.contains(id) && *id != World::ans_id() {
                errs.push(format!("adversary {i} ({}) targets unknown agent {id}", a.kind()));
            }
        }
    }
    errs
}

/// Runs `world` to quiescence or the horizon.
pub fn run(cfg: &SimConfig, world: World) -> Result<SimOutput, SimError> {
    let mut errs = cfg.validate().err().unwrap_or_default();
    errs.extend(validate_adversaries(cfg, &world.agent_ids()));
    if !errs.is_empty() {
        return Err(SimError::ScenarioInvalid(errs));
    }
    let start = world.start_ms;
    let initial: BTreeMap<AgentId, f64> = world
        .keys
        .keys()
        .filter_map(|id| world.registry.get(id).map(|a| (id.clone(), a.metadata.reputation_or_default())))
        .collect();
    let mut sim = Sim {
        cfg,
        impostor_key: KeyPair::from_seed(format!("acnbp/impostor/{}", cfg.seed).as_bytes()),
        world,
        queue: BTreeMap::new(),
        next_seq: 0,
        link_index: BTreeMap::new(),
        flooders: BTreeMap::new(),
        trace: Vec::new(),
        trace_index: 0,
        report: SimReport {
            initial_reputations: initial,
            commitments_verified: true,
            audit_valid: true,
            ..SimReport::default()
        },
    };
    for rec in sim.world.registrations.clone() {
        sim.log(rec.time_ms, "register", serde_json::to_value(&rec).expect("record encodes"));
    }
    for (at, anri, pow) in std::mem::take(&mut sim.world.scheduled) {
        sim.schedule(at, Event::Register { anri: Box::new(anri), pow });
    }
    for (i, a) in cfg.adversaries.iter().enumerate() {
        if let AdversarySpec::Flooder { registrations, queries, window_ms, start_ms, .. } = a {
            let n = (*registrations).max(*queries);
            for step in 0..n {
                let at = start + start_ms + window_ms * u64::from(step) / u64::from(n);
                sim.schedule(at, Event::Flood { adversary: i, step });
            }
        }
    }
    if sim.world.requester.is_some() {
        let at = start + sim.world.requester_start_ms;
        sim.schedule(at, Event::Start);
    }
    let mut end = start;
    let mut truncated = false;
    while let Some(((t, _), ev)) = sim.queue.pop_first() {
        if t > start + cfg.horizon_ms {
            truncated = true;
            break;
        }
        sim.world.clock.advance_to(t);
        end = t;
        match ev {
            Event::Start => sim.start(t),
            Event::Deliver { env, origin } => sim.deliver(env, origin, t),
            Event::Timer { agent, timer } => sim.fire(agent, timer, t),
            Event::Register { anri, pow } => sim.register(*anri, pow, t),
            Event::Flood { adversary, step } => sim.flood(adversary, step, t),
        }
    }
    Ok(sim.finish(end, truncated))
}

/// Session ids whose SSO was rewritten in transit.
pub fn tampered_sessions(report: &SimReport) -> Vec<SessionId> {
    let mut v: Vec<SessionId> = report.tampering.iter().map(|t| t.session_id).collect();
    v.dedup();
    v
}

#[cfg(test)]
mod tests;
