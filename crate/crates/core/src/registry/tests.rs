use super::*;
use crate::cert::CertificateAuthority;
use crate::crypto::{KeyPair, Signer};
use crate::envelope::{EnvelopeHeader, Nonce};
use crate::fixture::{agent_id, capability, metadata, registration_pow, signed_anri};
use crate::model::{EncryptionLevel, OntologyPath, Scalar, SecurityProfile};

const DIFFICULTY: u32 = 8;

struct World {
    ca: CertificateAuthority,
    clock: VirtualClock,
    reg: Registry,
}

fn world() -> World {
    let ca = CertificateAuthority::from_seed("test-ca", b"ca");
    let clock = VirtualClock::new(1_000_000);
    let cfg = RegistryConfig { pow_difficulty: DIFFICULTY, ..RegistryConfig::default() };
    let reg = Registry::new(ca.root(), cfg, clock.clone());
    World { ca, clock, reg }
}

fn translator(w: &World, name: &str, rep: f64, cost: f64) -> (KeyPair, Anri) {
    let key = KeyPair::from_seed(name.as_bytes());
    let cap = capability(
        &["translation", "legal", "en-fr"],
        EncryptionLevel::Advanced,
        &["legal-certified"],
        true,
        &[("deadline_hours", Scalar::Int(24))],
    );
    let anri = signed_anri(
        &w.ca,
        &key,
        agent_id(name, "translators"),
        vec![cap],
        "sim://x",
        metadata(Some(rep), cost, w.clock.now_ms(), 3_600_000),
    );
    (key, anri)
}

fn register(w: &mut World, anri: &Anri) -> Result<Receipt, RegistryError> {
    let pow = registration_pow(anri, DIFFICULTY);
    w.reg.register(anri.clone(), &pow)
}

fn query() -> CapabilityQuery {
    let mut q = CapabilityQuery::new(OntologyPath::new(["translation", "legal"]).unwrap());
    q.security_reqs = SecurityProfile::new(EncryptionLevel::Basic, Vec::<String>::new(), true);
    q
}

#[test]
fn valid_registration_returns_receipt() {
    let mut w = world();
    let (_, a) = translator(&w, "A", 0.9, 0.1);
    let r = register(&mut w, &a).unwrap();
    assert_eq!(r.agent_id, a.id);
    assert_eq!(r.record_hash, a.record_hash());
    assert_eq!(w.reg.live_count(), 1);
}

#[test]
fn default_difficulty_registration() {
    let mut w = world();
    w.reg = Registry::new(w.ca.root(), RegistryConfig::default(), w.clock.clone());
    let (_, a) = translator(&w, "A", 0.9, 0.1);
    let pow = registration_pow(&a, RegistryConfig::default().pow_difficulty);
    assert!(w.reg.register(a, &pow).is_ok());
}

#[test]
fn failure_matrix() {
    let mut w = world();
    let (key, good) = translator(&w, "A", 0.9, 0.1);

    // signature corrupted
    let mut bad_sig = good.clone();
    bad_sig.signature[0] ^= 1;
    assert_eq!(register(&mut w, &bad_sig).unwrap_err().name(), "SignatureInvalid");

    // certificate from an unknown CA
    let rogue = CertificateAuthority::from_seed("rogue", b"rogue");
    let mut foreign = good.clone();
    foreign.security.certificate = rogue.issue(good.id.clone(), key.public(), ["legal-certified"]);
    foreign.sign(&key).unwrap();
    assert_eq!(register(&mut w, &foreign).unwrap_err().name(), "CredentialFailure");

    // claimed certification not attested
    let mut overclaim = good.clone();
    overclaim.capabilities[0].security.certifications.insert("gov-clearance".into());
    overclaim.sign(&key).unwrap();
    assert_eq!(register(&mut w, &overclaim).unwrap_err().name(), "CredentialFailure");

    // empty capabilities
    let mut empty = good.clone();
    empty.capabilities.clear();
    empty.sign(&key).unwrap();
    assert_eq!(register(&mut w, &empty).unwrap_err().name(), "CapabilityValidationError");

    // wrong proof of work
    let err = w.reg.register(good.clone(), b"not-a-solution").unwrap_err();
    assert_eq!(err, RegistryError::PowRejected);

    w.clock.advance_by(10_000);
    assert!(register(&mut w, &good).is_ok());
    assert_eq!(register(&mut w, &good).unwrap_err().name(), "DuplicateRegistration");
}

#[test]
fn failed_registration_leaves_state_unchanged() {
    let mut w = world();
    let (_, a) = translator(&w, "A", 0.9, 0.1);
    register(&mut w, &a).unwrap();
    let before = w.reg.digest();
    let (_, mut b) = translator(&w, "B", 0.5, 0.1);
    b.signature[3] ^= 0x40;
    assert!(register(&mut w, &b).is_err());
    assert_eq!(w.reg.digest(), before);
}

#[test]
fn rate_limit_trips_exactly_once_past_capacity() {
    let mut w = world();
    let (_, a) = translator(&w, "A", 0.9, 0.1);
    let mut limited = 0;
    for _ in 0..6 {
        if let Err(RegistryError::RateLimited) = w.reg.register(a.clone(), b"x") {
            limited += 1;
        }
    }
    assert_eq!(limited, 1);
}

#[test]
fn stale_record_rejected() {
    let mut w = world();
    let (_, a) = translator(&w, "A", 0.9, 0.1);
    w.clock.advance_by(RegistryConfig::default().freshness_ms + 1);
    assert_eq!(register(&mut w, &a).unwrap_err().name(), "StaleRegistration");
}

#[test]
fn query_orders_by_similarity_then_id() {
    let mut w = world();
    for name in ["Zed", "Alpha", "Mid"] {
        let (_, a) = translator(&w, name, 0.5, 0.1);
        register(&mut w, &a).unwrap();
    }
    let key = KeyPair::from_seed(b"short");
    let short = signed_anri(
        &w.ca,
        &key,
        agent_id("Short", "translators"),
        vec![capability(&["translation", "legal"], EncryptionLevel::Basic, &[], true, &[])],
        "sim://s",
        metadata(None, 0.1, w.clock.now_ms(), 3_600_000),
    );
    register(&mut w, &short).unwrap();
    let names: Vec<String> = w.reg.query(&query(), 10).iter().map(|a| a.id.name().to_owned()).collect();
    assert_eq!(names, ["Short", "Alpha", "Mid", "Zed"]);
    assert_eq!(w.reg.query(&query(), 2).len(), 2);
}

#[test]
fn expired_records_disappear_and_can_reregister() {
    let mut w = world();
    let (key, mut a) = translator(&w, "A", 0.9, 0.1);
    a.metadata.ttl_ms = 1_000;
    a.sign(&key).unwrap();
    register(&mut w, &a).unwrap();
    w.clock.advance_by(1_000);
    assert_eq!(w.reg.query(&query(), 10).len(), 1);
    w.clock.advance_by(1);
    assert!(w.reg.query(&query(), 10).is_empty());
    assert!(w.reg.get(&a.id).is_none());

    a.metadata.registered_at = w.clock.now_ms();
    a.sign(&key).unwrap();
    assert!(register(&mut w, &a).is_ok());
}

#[test]
fn renew_and_revoke_need_owner_signature() {
    let mut w = world();
    let (key, a) = translator(&w, "A", 0.9, 0.1);
    register(&mut w, &a).unwrap();
    w.clock.advance_by(5_000);

    let mut next = a.clone();
    next.metadata.registered_at = w.clock.now_ms();
    next.metadata.ttl_ms = 7_200_000;
    next.sign(&key).unwrap();
    let other = KeyPair::from_seed(b"other");
    let forged = other.sign_bytes(&next.signing_bytes().unwrap());
    assert_eq!(
        w.reg.renew(&a.id, next.metadata.registered_at, 7_200_000, forged).unwrap_err(),
        RegistryError::SignatureInvalid
    );
    w.reg.renew(&a.id, next.metadata.registered_at, 7_200_000, next.signature.clone()).unwrap();
    assert_eq!(w.reg.get(&a.id).unwrap(), &next);

    let t = w.clock.now_ms();
    assert!(w.reg.revoke(&a.id, t, &other.sign_bytes(&revocation_bytes(&a.id, t))).is_err());
    w.reg.revoke(&a.id, t, &key.sign_bytes(&revocation_bytes(&a.id, t))).unwrap();
    assert!(w.reg.get(&a.id).is_none());
    assert_eq!(w.reg.revoke(&a.id, t, &[]).unwrap_err().name(), "UnknownAgent");
}

#[test]
fn two_authorities_do_not_mix() {
    let mut w = world();
    let other = CertificateAuthority::from_seed("second-ca", b"second");
    let key = KeyPair::from_seed(b"x");
    let anri = signed_anri(
        &other,
        &key,
        agent_id("X", "translators"),
        vec![capability(&["translation"], EncryptionLevel::Basic, &[], true, &[])],
        "sim://x",
        metadata(None, 1.0, w.clock.now_ms(), 10_000),
    );
    assert!(verify_anri(&anri, &other.root()));
    assert!(!verify_anri(&anri, &w.ca.root()));
    assert_eq!(register(&mut w, &anri).unwrap_err().name(), "CredentialFailure");
}

#[test]
fn ewma_values() {
    assert!((updated_reputation(0.5, Outcome::Commit) - 0.6).abs() < 1e-12);
    assert!((updated_reputation(0.5, Outcome::Abort) - 0.4).abs() < 1e-12);
    let twice = updated_reputation(updated_reputation(0.5, Outcome::Commit), Outcome::Commit);
    assert!((twice - 0.68).abs() < 1e-12);
}

fn dcu(requester: &KeyPair, req_id: &AgentId, report: &OutcomeReport, now: u64) -> SignedEnvelope {
    SignedEnvelope::seal_body(
        EnvelopeHeader {
            sender: req_id.clone(),
            recipient: report.provider.clone(),
            session_id: report.session_id,
            msg_type: MsgType::Dcu,
            nonce: Nonce([7; 16]),
            timestamp_ms: now,
            seq: 9,
        },
        report,
        requester,
    )
    .unwrap()
}

#[test]
fn outcome_updates_reputation_once() {
    let mut w = world();
    let (pkey, p) = translator(&w, "P", 0.5, 0.1);
    let (rkey, r) = translator(&w, "R", 0.5, 0.1);
    register(&mut w, &p).unwrap();
    register(&mut w, &r).unwrap();
    let report = OutcomeReport {
        requester: r.id.clone(),
        provider: p.id.clone(),
        session_id: SessionId([1; 16]),
        outcome: Outcome::Commit,
        attributable: false,
        reason: None,
        transcript_head: [0; 32],
    };
    let ev = dcu(&rkey, &r.id, &report, w.clock.now_ms());
    let mut resigned = p.clone();
    resigned.metadata.reputation = Some(updated_reputation(0.5, Outcome::Commit));
    resigned.sign(&pkey).unwrap();

    // provider claims more than the formula gives
    let mut greedy = p.clone();
    greedy.metadata.reputation = Some(0.9);
    greedy.sign(&pkey).unwrap();
    assert_eq!(w.reg.apply_outcome(&ev, greedy).unwrap_err().name(), "EvidenceRejected");

    let rep = w.reg.apply_outcome(&ev, resigned.clone()).unwrap();
    assert!((rep - 0.6).abs() < 1e-12);
    assert_eq!(w.reg.get(&p.id).unwrap().metadata.reputation, Some(rep));

    // replaying the same evidence is refused even with a matching record
    let mut again = resigned.clone();
    again.metadata.reputation = Some(updated_reputation(rep, Outcome::Commit));
    again.sign(&pkey).unwrap();
    assert_eq!(w.reg.apply_outcome(&ev, again).unwrap_err().name(), "EvidenceRejected");

    // forged evidence
    let mut forged = ev.clone();
    forged.seq = 10;
    assert_eq!(w.reg.apply_outcome(&forged, resigned).unwrap_err(), RegistryError::SignatureInvalid);
}

#[test]
fn snapshot_round_trip_and_tamper() {
    let mut w = world();
    for name in ["A", "B"] {
        let (_, a) = translator(&w, name, 0.5, 0.1);
        register(&mut w, &a).unwrap();
    }
    let bytes = w.reg.export_snapshot();
    let back = Registry::import_snapshot(&bytes, w.reg.config().clone(), w.clock.clone()).unwrap();
    assert_eq!(back.digest(), w.reg.digest());

    let text = String::from_utf8(bytes).unwrap();
    let tampered = text.replacen("\"cost_per_unit\":0.1", "\"cost_per_unit\":0.01", 1);
    assert_ne!(tampered, text);
    let err = Registry::import_snapshot(tampered.as_bytes(), RegistryConfig::default(), w.clock.clone());
    assert_eq!(err.unwrap_err().name(), "Snapshot");
}
