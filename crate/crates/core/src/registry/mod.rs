//! The Agent Name Service.
//!
//! Stores signed [`Anri`] records, answers capability queries and guards
//! admission with a per-agent token bucket and a proof-of-work puzzle bound
//! to the exact record being registered.

mod rate_limit;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::VirtualClock;
use crate::crypto::{sha3, verify_pow, verify_with, Hash32, PublicKey};
use crate::encoding::{canonical_decode, canonical_encode, EncodingError};
use crate::envelope::{MsgType, ReplayWindow, SessionId, SignedEnvelope};
use crate::model::{match_capability, AgentId, Anri, CapabilityQuery};

pub use rate_limit::TokenBucket;

/// Weight of the newest outcome in the reputation moving average.
pub const REPUTATION_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistryConfig {
    pub pow_difficulty: u32,
    pub bucket_capacity: f64,
    pub refill_per_sec: f64,
    pub query_bucket_capacity: f64,
    pub query_refill_per_sec: f64,
    /// Allowed distance between a record's `registered_at` and registry time.
    pub freshness_ms: u64,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        RegistryConfig {
            pow_difficulty: 12,
            bucket_capacity: 5.0,
            refill_per_sec: 1.0,
            query_bucket_capacity: 20.0,
            query_refill_per_sec: 10.0,
            freshness_ms: crate::envelope::DEFAULT_REPLAY_WINDOW_MS,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("credential verification failed: {0}")]
    CredentialFailure(String),
    #[error("capability validation failed: {0}")]
    CapabilityValidationError(String),
    #[error("signature invalid")]
    SignatureInvalid,
    #[error("proof of work rejected")]
    PowRejected,
    #[error("rate limited")]
    RateLimited,
    #[error("agent {0} already registered")]
    DuplicateRegistration(AgentId),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("record timestamp {registered_at} too far from registry time {now}")]
    StaleRegistration { registered_at: u64, now: u64 },
    #[error("outcome evidence rejected: {0}")]
    EvidenceRejected(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

impl RegistryError {
    pub fn name(&self) -> &'static str {
        match self {
            RegistryError::CredentialFailure(_) => "CredentialFailure",
            RegistryError::CapabilityValidationError(_) => "CapabilityValidationError",
            RegistryError::SignatureInvalid => "SignatureInvalid",
            RegistryError::PowRejected => "PowRejected",
            RegistryError::RateLimited => "RateLimited",
            RegistryError::DuplicateRegistration(_) => "DuplicateRegistration",
            RegistryError::UnknownAgent(_) => "UnknownAgent",
            RegistryError::StaleRegistration { .. } => "StaleRegistration",
            RegistryError::EvidenceRejected(_) => "EvidenceRejected",
            RegistryError::Snapshot(_) => "Snapshot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub agent_id: AgentId,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub record_hash: Hash32,
    pub registered_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Commit,
    Abort,
}

impl Outcome {
    pub fn score(self) -> f64 {
        match self {
            Outcome::Commit => 1.0,
            Outcome::Abort => 0.0,
        }
    }
}

/// `α·outcome + (1−α)·old` with α = [`REPUTATION_ALPHA`].
pub fn updated_reputation(old: f64, outcome: Outcome) -> f64 {
    REPUTATION_ALPHA * outcome.score() + (1.0 - REPUTATION_ALPHA) * old
}

/// Requester-signed statement of how a bound negotiation ended. Travels as
/// the body of a DCU envelope and doubles as evidence for the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub requester: AgentId,
    pub provider: AgentId,
    pub session_id: SessionId,
    pub outcome: Outcome,
    /// Whether the provider is to blame; only blamed aborts lower reputation.
    pub attributable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub transcript_head: Hash32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    pub ca_root: PublicKey,
    pub taken_at: u64,
    pub records: Vec<Anri>,
}

#[derive(Serialize)]
struct RevocationBody<'a> {
    op: &'static str,
    id: &'a AgentId,
    issued_at: u64,
}

/// Bytes an agent signs to revoke its own record.
pub fn revocation_bytes(id: &AgentId, issued_at: u64) -> Vec<u8> {
    canonical_encode(&RevocationBody { op: "revoke", id, issued_at }).expect("revocation encodes")
}

/// Challenge for a registration proof-of-work. Bound to the record's signed
/// content, so each registration needs fresh work.
pub fn registration_challenge(anri: &Anri) -> Result<Vec<u8>, EncodingError> {
    let mut c = b"acnbp/register/v1".to_vec();
    c.extend_from_slice(&anri.signing_bytes()?);
    Ok(c)
}

/// Self-signature holds and the embedded certificate chains to `ca_root`,
/// names this agent and key, and attests every certification the record
/// claims.
pub fn verify_anri(anri: &Anri, ca_root: &PublicKey) -> bool {
    anri.self_signature_valid() && credential_problem(anri, ca_root).is_none()
}

fn credential_problem(anri: &Anri, ca_root: &PublicKey) -> Option<String> {
    let cert = &anri.security.certificate;
    if !cert.chains_to(ca_root) {
        return Some(format!("certificate issued by {:?} does not chain to the registry root", cert.issuer));
    }
    if cert.subject != anri.id {
        return Some(format!("certificate subject {} is not {}", cert.subject, anri.id));
    }
    if cert.public_key != anri.security.public_key {
        return Some("certificate key differs from record key".into());
    }
    for cap in &anri.capabilities {
        if let Some(c) = cap.security.certifications.difference(&cert.certifications).next() {
            return Some(format!("certification {c:?} not attested"));
        }
    }
    None
}

#[derive(Debug)]
pub struct Registry {
    records: BTreeMap<AgentId, Anri>,
    ca_root: PublicKey,
    config: RegistryConfig,
    register_buckets: BTreeMap<AgentId, TokenBucket>,
    query_buckets: BTreeMap<AgentId, TokenBucket>,
    evidence_window: ReplayWindow,
    clock: VirtualClock,
}

impl Registry {
    pub fn new(ca_root: PublicKey, config: RegistryConfig, clock: VirtualClock) -> Self {
        Registry {
            records: BTreeMap::new(),
            ca_root,
            config,
            register_buckets: BTreeMap::new(),
            query_buckets: BTreeMap::new(),
            evidence_window: ReplayWindow::default(),
            clock,
        }
    }

    pub fn ca_root(&self) -> &PublicKey {
        &self.ca_root
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    fn is_live(anri: &Anri, now: u64) -> bool {
        now <= anri.metadata.expires_at()
    }

    /// Live record for `id`, if any.
    pub fn get(&self, id: &AgentId) -> Option<&Anri> {
        let now = self.now_ms();
        self.records.get(id).filter(|a| Self::is_live(a, now))
    }

    /// Stored record for `id`, live or expired.
    pub fn stored(&self, id: &AgentId) -> Option<&Anri> {
        self.records.get(id)
    }

    pub fn public_key_of(&self, id: &AgentId) -> Option<PublicKey> {
        self.get(id).map(|a| a.security.public_key)
    }

    pub fn live_ids(&self) -> Vec<AgentId> {
        let now = self.now_ms();
        self.records.values().filter(|a| Self::is_live(a, now)).map(|a| a.id.clone()).collect()
    }

    pub fn live_count(&self) -> usize {
        let now = self.now_ms();
        self.records.values().filter(|a| Self::is_live(a, now)).count()
    }

    /// Admission gates, in order: rate limit, proof-of-work, record
    /// validity, self-signature, credentials, freshness, uniqueness.
    /// A failed call changes nothing but the caller's token bucket.
    pub fn register(&mut self, anri: Anri, pow_nonce: &[u8]) -> Result<Receipt, RegistryError> {
        let now = self.now_ms();
        let cfg = &self.config;
        let bucket = self
            .register_buckets
            .entry(anri.id.clone())
            .or_insert_with(|| TokenBucket::new(cfg.bucket_capacity, cfg.refill_per_sec, now));
        if !bucket.try_take(now) {
            return Err(RegistryError::RateLimited);
        }
        let challenge =
            registration_challenge(&anri).map_err(|e| RegistryError::CapabilityValidationError(e.to_string()))?;
        if !verify_pow(&challenge, pow_nonce, self.config.pow_difficulty) {
            return Err(RegistryError::PowRejected);
        }
        anri.validate().map_err(|e| RegistryError::CapabilityValidationError(e.to_string()))?;
        if !anri.self_signature_valid() {
            return Err(RegistryError::SignatureInvalid);
        }
        if let Some(problem) = credential_problem(&anri, &self.ca_root) {
            return Err(RegistryError::CredentialFailure(problem));
        }
        if anri.metadata.registered_at.abs_diff(now) > self.config.freshness_ms {
            return Err(RegistryError::StaleRegistration { registered_at: anri.metadata.registered_at, now });
        }
        if self.get(&anri.id).is_some() {
            return Err(RegistryError::DuplicateRegistration(anri.id.clone()));
        }
        let receipt = Receipt {
            agent_id: anri.id.clone(),
            record_hash: anri.record_hash(),
            registered_at: anri.metadata.registered_at,
        };
        self.records.insert(anri.id.clone(), anri);
        Ok(receipt)
    }

    /// Live records with a matching capability, best similarity first, ties
    /// by agent id.
    pub fn query(&self, q: &CapabilityQuery, limit: usize) -> Vec<Anri> {
        let now = self.now_ms();
        let mut hits: Vec<(f64, &Anri)> = self
            .records
            .values()
            .filter(|a| Self::is_live(a, now))
            .filter_map(|a| {
                a.capabilities
                    .iter()
                    .map(|c| match_capability(q, c))
                    .filter(|m| m.matched)
                    .map(|m| m.similarity)
                    .reduce(f64::max)
                    .map(|s| (s, a))
            })
            .collect();
        hits.sort_by(|(sa, a), (sb, b)| sb.total_cmp(sa).then_with(|| a.id.cmp(&b.id)));
        hits.into_iter().take(limit).map(|(_, a)| a.clone()).collect()
    }

    /// [`Registry::query`] metered by the requester's query bucket.
    pub fn query_as(
        &mut self,
        requester: &AgentId,
        q: &CapabilityQuery,
        limit: usize,
    ) -> Result<Vec<Anri>, RegistryError> {
        let now = self.now_ms();
        let cfg = &self.config;
        let bucket = self
            .query_buckets
            .entry(requester.clone())
            .or_insert_with(|| TokenBucket::new(cfg.query_bucket_capacity, cfg.query_refill_per_sec, now));
        if !bucket.try_take(now) {
            return Err(RegistryError::RateLimited);
        }
        Ok(self.query(q, limit))
    }

    /// Extends a record's lifetime. `signature` must be the record owner's
    /// signature over the record with the new `registered_at` and `ttl_ms`.
    pub fn renew(
        &mut self,
        id: &AgentId,
        registered_at: u64,
        ttl_ms: u64,
        signature: Vec<u8>,
    ) -> Result<Receipt, RegistryError> {
        let now = self.now_ms();
        let current = self.get(id).ok_or_else(|| RegistryError::UnknownAgent(id.clone()))?;
        if ttl_ms == 0 {
            return Err(RegistryError::CapabilityValidationError("ttl_ms must be positive".into()));
        }
        if registered_at.abs_diff(now) > self.config.freshness_ms
            || registered_at < current.metadata.registered_at
        {
            return Err(RegistryError::StaleRegistration { registered_at, now });
        }
        let mut updated = current.clone();
        updated.metadata.registered_at = registered_at;
        updated.metadata.ttl_ms = ttl_ms;
        updated.signature = signature;
        if !updated.self_signature_valid() {
            return Err(RegistryError::SignatureInvalid);
        }
        let receipt = Receipt { agent_id: id.clone(), record_hash: updated.record_hash(), registered_at };
        self.records.insert(id.clone(), updated);
        Ok(receipt)
    }

    pub fn revoke(&mut self, id: &AgentId, issued_at: u64, signature: &[u8]) -> Result<(), RegistryError> {
        let current = self.get(id).ok_or_else(|| RegistryError::UnknownAgent(id.clone()))?;
        if !verify_with(&current.security.public_key, &revocation_bytes(id, issued_at), signature) {
            return Err(RegistryError::SignatureInvalid);
        }
        self.records.remove(id);
        Ok(())
    }

    /// Applies a settled negotiation to the provider's reputation.
    ///
    /// `evidence` is the requester's signed DCU envelope carrying an
    /// [`OutcomeReport`]; `resigned` is the provider's record re-signed with
    /// the updated reputation. Returns the stored reputation.
    pub fn apply_outcome(&mut self, evidence: &SignedEnvelope, resigned: Anri) -> Result<f64, RegistryError> {
        let reject = |m: &str| RegistryError::EvidenceRejected(m.to_owned());
        if evidence.msg_type != MsgType::Dcu {
            return Err(reject("evidence is not a DCU message"));
        }
        let requester_key = self
            .public_key_of(&evidence.sender)
            .ok_or_else(|| RegistryError::UnknownAgent(evidence.sender.clone()))?;
        if !evidence.verify(&requester_key) {
            return Err(RegistryError::SignatureInvalid);
        }
        let report: OutcomeReport = evidence.decode_body().map_err(|e| reject(&e.to_string()))?;
        if report.requester != evidence.sender || report.provider != resigned.id {
            return Err(reject("report parties do not match"));
        }
        let stored = self.get(&resigned.id).ok_or_else(|| RegistryError::UnknownAgent(resigned.id.clone()))?;
        let old = stored.metadata.reputation_or_default();
        let expected = if report.outcome == Outcome::Commit || report.attributable {
            updated_reputation(old, report.outcome)
        } else {
            old
        };
        let mut want = stored.clone();
        want.metadata.reputation = Some(expected);
        want.signature = resigned.signature.clone();
        if want != resigned {
            return Err(reject("re-signed record differs beyond the reputation update"));
        }
        if !resigned.self_signature_valid() {
            return Err(RegistryError::SignatureInvalid);
        }
        let now = self.now_ms();
        self.evidence_window.check(evidence, now).map_err(|e| reject(e.name()))?;
        self.records.insert(resigned.id.clone(), resigned);
        Ok(expected)
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot {
            ca_root: self.ca_root,
            taken_at: self.now_ms(),
            records: self.records.values().cloned().collect(),
        }
    }

    pub fn export_snapshot(&self) -> Vec<u8> {
        canonical_encode(&self.snapshot()).expect("registry records encode")
    }

    /// Rebuilds a registry from a snapshot, re-verifying every record.
    pub fn import_snapshot(bytes: &[u8], config: RegistryConfig, clock: VirtualClock) -> Result<Self, RegistryError> {
        let snap: RegistrySnapshot =
            canonical_decode(bytes).map_err(|e| RegistryError::Snapshot(e.to_string()))?;
        let mut reg = Registry::new(snap.ca_root, config, clock);
        for anri in snap.records {
            if !verify_anri(&anri, &snap.ca_root) {
                return Err(RegistryError::Snapshot(format!("record {} does not verify", anri.id)));
            }
            reg.records.insert(anri.id.clone(), anri);
        }
        Ok(reg)
    }

    /// Independent copy on its own clock with fresh rate-limit state.
    /// Restarts an experiment from an already verified record set without
    /// re-checking every signature.
    pub fn fork(&self, clock: VirtualClock) -> Self {
        Registry { records: self.records.clone(), ..Registry::new(self.ca_root, self.config.clone(), clock) }
    }

    /// Hash of the canonical snapshot; equal registries give equal digests.
    pub fn digest(&self) -> Hash32 {
        sha3(&canonical_encode(&self.records.values().collect::<Vec<_>>()).expect("records encode"))
    }
}

#[cfg(test)]
mod tests;
