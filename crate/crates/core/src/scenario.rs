//! Scenario files: a world description, a simulation config and optional
//! expected outcomes, in the same canonical JSON used on the wire.
//!
//! The loader accepts whitespace between tokens so bundled scenarios can be
//! read by humans; everything else about the format is canonical.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cert::CertificateAuthority;
use crate::cps::ScoringWeights;
use crate::crypto::KeyPair;
use crate::fixture;
use crate::model::{AgentId, Anri, AnriMetadata, CapabilitySpec};
use crate::negotiation::{ProviderConfig, RequesterConfig, RequesterPhase};
use crate::registry::{Outcome, RegistryConfig};
use crate::sim::{self, SimConfig, SimError, SimOutput, SimReport, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaDef {
    pub name: String,
    pub seed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reputation: Option<f64>,
    pub cost_per_unit: f64,
    #[serde(default = "default_ttl")]
    pub ttl_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<f64>,
}

fn default_ttl() -> u64 {
    3_600_000
}

/// Deliberately broken registration, one per admission gate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegistrationFault {
    /// Certificate from an authority the registry does not trust.
    RogueCa,
    /// First capability claims a certification the certificate lacks.
    Overclaim { certification: String },
    EmptyCapabilities,
    /// One byte of the self-signature flipped.
    BadSignature,
    BadPow,
    /// The same record submitted twice.
    Duplicate,
    /// `attempts` submissions at one instant.
    Burst { attempts: u32 },
    /// `registered_at` this far in the past.
    Stale { age_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDef {
    pub id: AgentId,
    pub key_seed: String,
    #[serde(default = "default_location")]
    pub location: String,
    pub capabilities: Vec<CapabilitySpec>,
    pub metadata: MetadataDef,
    /// Present for agents that answer session requests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderConfig>,
    /// Offset from the start at which the agent registers.
    #[serde(default)]
    pub register_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<RegistrationFault>,
}

fn default_location() -> String {
    "sim://agent".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequesterDef {
    /// Must name an entry in `agents`.
    pub id: AgentId,
    pub config: RequesterConfig,
    #[serde(default)]
    pub start_ms: u64,
}

/// Expected outcomes, checked in assertion mode. Absent fields are not
/// checked. Maps are keyed by `name@namespace`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectations {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<AgentId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eliminated: Option<BTreeMap<String, String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sessions: Option<Vec<AgentId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session_failures: Option<BTreeMap<String, String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<AgentId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requester_phase: Option<RequesterPhase>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    /// Whether a dual-signed binding exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub binding: Option<bool>,
    /// Provider, as `name@namespace`, to latest phase.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider_phases: Option<BTreeMap<String, String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reputation_increased: Option<Vec<AgentId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reputation_decreased: Option<Vec<AgentId>>,
    /// Agent, as `name@namespace`, to the results of its registration
    /// attempts in order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registrations: Option<BTreeMap<String, Vec<String>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub live_agents: Option<Vec<AgentId>>,
    /// Injected envelopes that were not rejected as replays.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replays_accepted: Option<usize>,
    /// Injections that moved the victim's protocol state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub injected_state_changes: Option<usize>,
    /// Error name to the minimum number of rejections carrying it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejections_at_least: Option<BTreeMap<String, usize>>,
    /// Minimum RateLimited registrations across all flooders.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flood_rate_limited_at_least: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_start")]
    pub start_ms: u64,
    pub ca: CaDef,
    #[serde(default)]
    pub registry: RegistryConfig,
    pub agents: Vec<AgentDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requester: Option<RequesterDef>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectations>,
}

fn default_start() -> u64 {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaViolation {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError { line: usize, column: usize, message: String },
    #[error("schema violations:\n{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
    SchemaViolation(Vec<SchemaViolation>),
}

/// 1-based line of the `nth` (0-based) occurrence of `needle`, or 1.
fn line_of(text: &str, needle: &str, nth: usize) -> usize {
    text.match_indices(needle)
        .nth(nth)
        .map_or(1, |(pos, _)| text[..pos].matches('\n').count() + 1)
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario = serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            if e.is_data() {
                ScenarioError::SchemaViolation(vec![SchemaViolation { line: e.line(), message }])
            } else {
                ScenarioError::ParseError { line: e.line(), column: e.column(), message }
            }
        })?;
        let violations = sc.violations(text);
        if violations.is_empty() {
            Ok(sc)
        } else {
            Err(ScenarioError::SchemaViolation(violations))
        }
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    fn violations(&self, text: &str) -> Vec<SchemaViolation> {
        let mut out = Vec::new();
        let mut seen: BTreeMap<&AgentId, usize> = BTreeMap::new();
        let mut v = |line: usize, message: String| out.push(SchemaViolation { line, message });
        for a in &self.agents {
            let name = format!("\"{}\"", a.id.name());
            let count = seen.entry(&a.id).or_insert(0);
            *count += 1;
            if *count == 2 {
                v(line_of(text, &name, 1), format!("duplicate agent id {}", a.id));
            }
            if a.id == World::ans_id() {
                v(line_of(text, &name, 0), format!("agent id {} is reserved", a.id));
            }
            let broken_caps = matches!(a.fault, Some(RegistrationFault::EmptyCapabilities));
            if !broken_caps {
                if a.capabilities.is_empty() {
                    v(line_of(text, &name, 0), format!("agent {} has no capabilities", a.id));
                }
                for c in &a.capabilities {
                    if let Err(e) = c.validate() {
                        v(line_of(text, &name, 0), format!("agent {}: {e}", a.id));
                    }
                }
            }
            if !a.metadata.cost_per_unit.is_finite() || a.metadata.cost_per_unit < 0.0 {
                v(line_of(text, &name, 0), format!("agent {}: cost_per_unit must be finite and nonnegative", a.id));
            }
        }
        if let Some(r) = &self.requester {
            let line = line_of(text, "\"requester\"", 0);
            if !seen.contains_key(&r.id) {
                v(line, format!("requester {} is not among the agents", r.id));
            }
            if self.agents.iter().any(|a| a.id == r.id && a.provider.is_some()) {
                v(line, format!("requester {} is also configured as a provider", r.id));
            }
            if let Err(e) = r.config.query.validate() {
                v(line, format!("requester query: {e}"));
            }
            if let Err(e) = r.config.weights.validate() {
                v(line, format!("requester weights: {e}"));
            }
        }
        let sim_line = line_of(text, "\"sim\"", 0);
        if let Err(errs) = self.sim.validate() {
            errs.into_iter().for_each(|e| v(sim_line, e));
        }
        let known: Vec<AgentId> = self.agents.iter().map(|a| a.id.clone()).collect();
        for e in sim::validate_adversaries(&self.sim, &known) {
            v(sim_line, e);
        }
        out
    }

    pub fn agent(&self, id: &AgentId) -> Option<&AgentDef> {
        self.agents.iter().find(|a| &a.id == id)
    }

    /// Builds the signed record `def` would submit, before any fault that
    /// only affects submission.
    fn record(&self, ca: &CertificateAuthority, def: &AgentDef, key: &KeyPair) -> Anri {
        let mut caps = def.capabilities.clone();
        let registered_at = match def.fault {
            Some(RegistrationFault::Stale { age_ms }) => (self.start_ms + def.register_at_ms).saturating_sub(age_ms),
            _ => self.start_ms + def.register_at_ms,
        };
        let meta = AnriMetadata {
            reputation: def.metadata.reputation,
            cost_per_unit: def.metadata.cost_per_unit,
            registered_at,
            ttl_ms: def.metadata.ttl_ms,
            risk: def.metadata.risk,
        };
        let rogue;
        let issuer = if def.fault == Some(RegistrationFault::RogueCa) {
            rogue = CertificateAuthority::from_seed("rogue-ca", format!("rogue/{}", self.ca.seed).as_bytes());
            &rogue
        } else {
            ca
        };
        let mut anri = fixture::signed_anri(issuer, key, def.id.clone(), caps.clone(), &def.location, meta);
        match &def.fault {
            Some(RegistrationFault::Overclaim { certification }) => {
                if let Some(c) = caps.first_mut() {
                    c.security.certifications.insert(certification.clone());
                }
                anri.capabilities = caps;
                anri.sign(key).expect("record encodes");
            }
            Some(RegistrationFault::EmptyCapabilities) => {
                anri.capabilities.clear();
                anri.sign(key).expect("record encodes");
            }
            Some(RegistrationFault::BadSignature) => {
                if let Some(b) = anri.signature.first_mut() {
                    *b ^= 0x01;
                }
            }
            _ => {}
        }
        anri
    }

    /// Builds the world for one run with the given seed.
    pub fn build(&self, seed: u64, weights: Option<ScoringWeights>) -> World {
        let ca = CertificateAuthority::from_seed(self.ca.name.clone(), self.ca.seed.as_bytes());
        let mut world = World::new(self.start_ms, seed, ca.clone(), self.registry.clone());
        for def in &self.agents {
            let key = KeyPair::from_seed(def.key_seed.as_bytes());
            let anri = self.record(&ca, def, &key);
            let pow = if def.fault == Some(RegistrationFault::BadPow) {
                fixture::failing_pow(&anri, self.registry.pow_difficulty)
            } else {
                fixture::registration_pow(&anri, self.registry.pow_difficulty)
            };
            let attempts = match def.fault {
                Some(RegistrationFault::Duplicate) => 2,
                Some(RegistrationFault::Burst { attempts }) => attempts,
                _ => 1,
            };
            for _ in 0..attempts {
                world.register(anri.clone(), pow.clone(), Some(def.register_at_ms));
            }
            match &def.provider {
                Some(cfg) => world.add_provider(anri, key, cfg.clone()),
                None => world.add_key(def.id.clone(), key),
            }
        }
        if let Some(r) = &self.requester {
            let def = self.agent(&r.id).expect("validated");
            let key = KeyPair::from_seed(def.key_seed.as_bytes());
            let mut cfg = r.config.clone();
            if let Some(w) = weights {
                cfg.weights = w;
            }
            world.set_requester(r.id.clone(), key, cfg, r.start_ms);
        }
        world
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub weights: Option<ScoringWeights>,
}

pub struct ScenarioRun {
    pub output: SimOutput,
    /// Unmet expectations; empty when none were given.
    pub mismatches: Vec<String>,
}

pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<ScenarioRun, SimError> {
    let mut cfg = scenario.sim.clone();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let world = scenario.build(cfg.seed, opts.weights);
    let output = sim::run(&cfg, world)?;
    let mismatches = scenario.expect.as_ref().map(|e| e.check(&output.report)).unwrap_or_default();
    Ok(ScenarioRun { output, mismatches })
}

impl Expectations {
    pub fn check(&self, r: &SimReport) -> Vec<String> {
        let mut out = Vec::new();
        let req = r.requester.as_ref();
        let mut cmp = |what: &str, want: String, got: String| {
            if want != got {
                out.push(format!("{what}: expected {want}, got {got}"));
            }
        };
        let ids = |v: &[AgentId]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
        if let Some(w) = &self.ranking {
            cmp("ranking", ids(w), req.map(|q| ids(&q.ranking)).unwrap_or_default());
        }
        if let Some(w) = &self.eliminated {
            let got: BTreeMap<String, String> = req
                .map(|q| q.eliminated.iter().map(|(a, r)| (a.to_string(), r.clone())).collect())
                .unwrap_or_default();
            cmp("eliminated", format!("{w:?}"), format!("{got:?}"));
        }
        if let Some(w) = &self.sessions {
            let mut w = w.clone();
            w.sort();
            cmp("sessions", ids(&w), req.map(|q| ids(&q.sessions)).unwrap_or_default());
        }
        if let Some(w) = &self.session_failures {
            let got: BTreeMap<String, String> = req
                .map(|q| q.session_failures.iter().map(|f| (f.agent.to_string(), f.reason.clone())).collect())
                .unwrap_or_default();
            cmp("session failures", format!("{w:?}"), format!("{got:?}"));
        }
        if let Some(w) = &self.selected {
            let got = req.and_then(|q| q.selected.as_ref()).map_or_else(|| "none".into(), ToString::to_string);
            cmp("selected", w.to_string(), got);
        }
        if let Some(w) = &self.requester_phase {
            cmp("requester phase", w.to_string(), req.map(|q| q.phase.to_string()).unwrap_or_default());
        }
        if let Some(w) = &self.outcome {
            let got = req.and_then(|q| q.outcome).map_or_else(|| "none".into(), |o| format!("{o:?}"));
            cmp("outcome", format!("{w:?}"), got);
        }
        if let Some(w) = &self.abort_reason {
            cmp("abort reason", w.clone(), req.and_then(|q| q.abort_reason.clone()).unwrap_or_default());
        }
        if let Some(w) = self.binding {
            let got = req.and_then(|q| q.binding.as_ref()).is_some() && r.commitments_verified;
            cmp("dual-signed binding", w.to_string(), got.to_string());
        }
        if let Some(w) = &self.provider_phases {
            for (id, phase) in w {
                let got = r.providers.iter().find(|(a, _)| a.to_string() == *id).map(|(_, p)| p.phase.clone());
                cmp(&format!("phase of {id}"), phase.clone(), got.unwrap_or_default());
            }
        }
        let rep = |id: &AgentId| (r.initial_reputations.get(id).copied(), r.reputations.get(id).copied());
        for id in self.reputation_increased.iter().flatten() {
            let (a, b) = rep(id);
            if !matches!((a, b), (Some(a), Some(b)) if b > a) {
                out.push(format!("reputation of {id} did not increase: {a:?} -> {b:?}"));
            }
        }
        for id in self.reputation_decreased.iter().flatten() {
            let (a, b) = rep(id);
            if !matches!((a, b), (Some(a), Some(b)) if b < a) {
                out.push(format!("reputation of {id} did not decrease: {a:?} -> {b:?}"));
            }
        }
        if let Some(w) = &self.registrations {
            for (id, want) in w {
                let got: Vec<String> =
                    r.registrations.iter().filter(|x| x.agent.to_string() == *id).map(|x| x.result.clone()).collect();
                if &got != want {
                    out.push(format!("registrations of {id}: expected {want:?}, got {got:?}"));
                }
            }
        }
        if let Some(w) = &self.live_agents {
            let want: BTreeSet<&AgentId> = w.iter().collect();
            let got: BTreeSet<&AgentId> = r.live_agents.iter().collect();
            if want != got {
                out.push(format!("live agents: expected {want:?}, got {got:?}"));
            }
        }
        if let Some(w) = self.replays_accepted {
            let got = r.injections.iter().filter(|i| i.adversary == "REPLAYER" && !i.replay_rejected).count();
            if got != w {
                out.push(format!("replays accepted: expected {w}, got {got}"));
            }
        }
        if let Some(w) = self.injected_state_changes {
            let got = r.injections.iter().filter(|i| i.state_changed).count();
            if got != w {
                out.push(format!("injected state changes: expected {w}, got {got}"));
            }
        }
        for (name, min) in self.rejections_at_least.iter().flatten() {
            let got = r.rejections_named(name);
            if got < *min {
                out.push(format!("rejections {name}: expected at least {min}, got {got}"));
            }
        }
        if let Some(min) = self.flood_rate_limited_at_least {
            let got: u32 = r.flood.values().map(|f| f.registrations.get("RateLimited").copied().unwrap_or(0)).sum();
            if got < min {
                out.push(format!("flood RateLimited: expected at least {min}, got {got}"));
            }
        }
        out
    }
}
