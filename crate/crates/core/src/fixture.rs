//! Builders for signed records, shared by the simulator, scenarios and tests.

use std::collections::BTreeMap;
use std::sync::{Mutex, OnceLock};

use crate::cert::CertificateAuthority;
use crate::crypto::{proof_of_work, sha3, verify_pow, Hash32, KeyPair};
use crate::model::{
    AgentId, Anri, AnriMetadata, AnriSecurity, CapabilitySpec, Constraints, EncryptionLevel, OntologyPath,
    Scalar, SecurityProfile, Slot,
};
use crate::registry::registration_challenge;

/// Issues a certificate for `key` and returns the self-signed record.
pub fn signed_anri(
    ca: &CertificateAuthority,
    key: &KeyPair,
    id: AgentId,
    capabilities: Vec<CapabilitySpec>,
    location: &str,
    metadata: AnriMetadata,
) -> Anri {
    let certs: std::collections::BTreeSet<String> =
        capabilities.iter().flat_map(|c| c.security.certifications.iter().cloned()).collect();
    let certificate = ca.issue(id.clone(), key.public(), certs);
    let mut anri = Anri {
        id,
        capabilities,
        location: location.to_owned(),
        security: AnriSecurity { public_key: key.public(), certificate },
        metadata,
        signature: Vec::new(),
    };
    anri.sign(key).expect("records built here encode");
    anri
}

/// Proof-of-work nonce admitting `anri` at `difficulty`.
///
/// The answer depends only on the challenge, and scenario suites rebuild
/// the same records hundreds of times, so solutions are remembered for the
/// life of the process.
pub fn registration_pow(anri: &Anri, difficulty: u32) -> Vec<u8> {
    static SOLVED: OnceLock<Mutex<BTreeMap<(Hash32, u32), Vec<u8>>>> = OnceLock::new();
    let challenge = registration_challenge(anri).expect("signed record encodes");
    let key = (sha3(&challenge), difficulty);
    let solved = SOLVED.get_or_init(Default::default);
    if let Some(n) = solved.lock().expect("cache lock").get(&key) {
        return n.clone();
    }
    let nonce = proof_of_work(&challenge, difficulty);
    solved.lock().expect("cache lock").insert(key, nonce.clone());
    nonce
}

/// A nonce that does not solve the puzzle for `anri`.
pub fn failing_pow(anri: &Anri, difficulty: u32) -> Vec<u8> {
    let challenge = registration_challenge(anri).expect("signed record encodes");
    (0u64..)
        .map(|n| n.to_be_bytes().to_vec())
        .find(|n| !verify_pow(&challenge, n, difficulty))
        .expect("difficulty above zero leaves failing nonces")
}

pub fn metadata(reputation: Option<f64>, cost_per_unit: f64, registered_at: u64, ttl_ms: u64) -> AnriMetadata {
    AnriMetadata { reputation, cost_per_unit, registered_at, ttl_ms, risk: None }
}

/// A text-to-text capability with the given path, security and constraints.
pub fn capability(
    path: &[&str],
    level: EncryptionLevel,
    certifications: &[&str],
    signing: bool,
    constraints: &[(&str, Scalar)],
) -> CapabilitySpec {
    CapabilitySpec {
        desc: OntologyPath::new(path.iter().copied()).expect("fixture paths are valid"),
        input: vec![Slot::new("text", "string")],
        output: vec![Slot::new("text", "string")],
        constraints: constraints.iter().map(|(k, v)| (k.to_string(), *v)).collect::<Constraints>(),
        security: SecurityProfile::new(level, certifications.iter().copied(), signing),
    }
}

pub fn agent_id(name: &str, namespace: &str) -> AgentId {
    AgentId::new(name, namespace).expect("fixture ids are valid")
}
