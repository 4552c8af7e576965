use serde::{Deserialize, Serialize};

use super::{CapabilityQuery, CapabilitySpec, Constraints, Scalar, SecurityProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matched: bool,
    pub similarity: f64,
}

/// `offered` meets or exceeds `required` on encryption, certifications and
/// signing.
pub fn security_dominates(offered: &SecurityProfile, required: &SecurityProfile) -> bool {
    offered.encryption_level >= required.encryption_level
        && required.certifications.is_subset(&offered.certifications)
        && (!required.signing_required || offered.signing_required)
}

/// Checks one query bound against the capability's value for the same key.
///
/// `max_*` and `deadline_*` keys are upper bounds, `min_*` keys are lower
/// bounds, anything else must be equal.
pub fn constraint_satisfied(key: &str, bound: Scalar, offered: Option<Scalar>) -> bool {
    let Some(offered) = offered else {
        return false;
    };
    let (b, o) = (bound.as_f64(), offered.as_f64());
    if key.starts_with("max_") || key.starts_with("deadline_") {
        o <= b
    } else if key.starts_with("min_") {
        o >= b
    } else {
        o == b
    }
}

/// Keys of `bounds` not satisfied by `offered`, in key order.
pub fn constraint_violations(bounds: &Constraints, offered: &Constraints) -> Vec<String> {
    bounds
        .iter()
        .filter(|(k, b)| !constraint_satisfied(k, **b, offered.get(*k).copied()))
        .map(|(k, _)| k.clone())
        .collect()
}

fn similarity(query: &CapabilityQuery, cap: &CapabilitySpec) -> f64 {
    let shared = query.required.shared_prefix_len(&cap.desc);
    if shared == 0 {
        return 0.0;
    }
    shared as f64 / query.required.len().max(cap.desc.len()) as f64
}

/// Ontology and constraint match without the security clause.
pub fn match_semantics(query: &CapabilityQuery, cap: &CapabilitySpec) -> MatchResult {
    let matched = query.required.is_prefix_of(&cap.desc)
        && constraint_violations(&query.constraints, &cap.constraints).is_empty();
    MatchResult { matched, similarity: similarity(query, cap) }
}

pub fn match_capability(query: &CapabilityQuery, cap: &CapabilitySpec) -> MatchResult {
    let semantic = match_semantics(query, cap);
    MatchResult {
        matched: semantic.matched && security_dominates(&cap.security, &query.security_reqs),
        similarity: semantic.similarity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncryptionLevel, OntologyPath};
    use proptest::prelude::*;

    fn path(p: &[&str]) -> OntologyPath {
        OntologyPath::new(p.iter().copied()).unwrap()
    }

    fn cap(p: &[&str], sec: SecurityProfile) -> CapabilitySpec {
        CapabilitySpec {
            desc: path(p),
            input: vec![],
            output: vec![],
            constraints: [("deadline_hours".to_string(), Scalar::Int(24))].into(),
            security: sec,
        }
    }

    fn advanced() -> SecurityProfile {
        SecurityProfile::new(EncryptionLevel::Advanced, ["gov-clearance", "legal-certified"], true)
    }

    #[test]
    fn prefix_match_similarity_two_thirds() {
        let mut q = CapabilityQuery::new(path(&["translation", "legal"]));
        q.constraints.insert("deadline_hours".into(), Scalar::Int(24));
        let r = match_capability(&q, &cap(&["translation", "legal", "en-fr"], advanced()));
        assert!(r.matched);
        // shared prefix 2 over max length 3
        assert!((r.similarity - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_paths_match_fully() {
        let mut q = CapabilityQuery::new(path(&["translation"]));
        q.security_reqs = advanced();
        let r = match_capability(&q, &cap(&["translation"], advanced()));
        assert!(r.matched);
        assert_eq!(r.similarity, 1.0);
    }

    #[test]
    fn basic_translator_fails_advanced_requirement() {
        let mut q = CapabilityQuery::new(path(&["translation", "legal", "en-fr"]));
        q.security_reqs = SecurityProfile::new(EncryptionLevel::Advanced, Vec::<String>::new(), true);
        let weak = SecurityProfile::new(EncryptionLevel::None, Vec::<String>::new(), false);
        let r = match_capability(&q, &cap(&["translation", "legal", "en-fr"], weak));
        assert!(!r.matched);
        assert_eq!(r.similarity, 1.0);
    }

    #[test]
    fn disjoint_paths_have_zero_similarity() {
        let q = CapabilityQuery::new(path(&["vision"]));
        let r = match_capability(&q, &cap(&["translation"], advanced()));
        assert!(!r.matched);
        assert_eq!(r.similarity, 0.0);
    }

    #[test]
    fn query_longer_than_capability_does_not_match() {
        let q = CapabilityQuery::new(path(&["translation", "legal", "en-fr"]));
        let r = match_capability(&q, &cap(&["translation", "legal"], advanced()));
        assert!(!r.matched);
        assert!((r.similarity - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn missing_capability_constraint_is_unsatisfied() {
        let mut q = CapabilityQuery::new(path(&["translation"]));
        q.constraints.insert("max_latency_ms".into(), Scalar::Int(100));
        assert!(!match_capability(&q, &cap(&["translation"], advanced())).matched);
    }

    #[test]
    fn constraint_key_semantics() {
        assert!(constraint_satisfied("max_latency_ms", Scalar::Int(100), Some(Scalar::Int(100))));
        assert!(!constraint_satisfied("max_latency_ms", Scalar::Int(100), Some(Scalar::Int(101))));
        assert!(constraint_satisfied("deadline_hours", Scalar::Int(24), Some(Scalar::Int(2))));
        assert!(!constraint_satisfied("deadline_hours", Scalar::Int(24), Some(Scalar::Int(48))));
        assert!(constraint_satisfied("min_accuracy", Scalar::Real(0.9), Some(Scalar::Real(0.95))));
        assert!(!constraint_satisfied("min_accuracy", Scalar::Real(0.9), Some(Scalar::Real(0.85))));
        assert!(constraint_satisfied("region", Scalar::Int(3), Some(Scalar::Real(3.0))));
        assert!(!constraint_satisfied("region", Scalar::Int(3), Some(Scalar::Int(4))));
        assert!(!constraint_satisfied("region", Scalar::Int(3), None));
    }

    #[test]
    fn dominance_examples() {
        let required = SecurityProfile::new(EncryptionLevel::Advanced, ["legal-certified"], true);
        assert!(security_dominates(&advanced(), &required));
        assert!(security_dominates(&required, &required));
        let weak = SecurityProfile::new(EncryptionLevel::Basic, Vec::<String>::new(), false);
        let strict = SecurityProfile::new(EncryptionLevel::Advanced, Vec::<String>::new(), true);
        assert!(!security_dominates(&weak, &strict));
    }

    fn arb_profile() -> impl Strategy<Value = SecurityProfile> {
        (
            0u8..3,
            proptest::collection::btree_set(prop_oneof!["a", "b", "c", "d"], 0..4),
            any::<bool>(),
        )
            .prop_map(|(lvl, certs, sign)| SecurityProfile {
                encryption_level: match lvl {
                    0 => EncryptionLevel::None,
                    1 => EncryptionLevel::Basic,
                    _ => EncryptionLevel::Advanced,
                },
                certifications: certs.into_iter().map(String::from).collect(),
                signing_required: sign,
            })
    }

    fn arb_path() -> impl Strategy<Value = OntologyPath> {
        proptest::collection::vec(prop_oneof!["x", "y", "z"], 1..5)
            .prop_map(|v| OntologyPath::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn dominance_is_reflexive(a in arb_profile()) {
            prop_assert!(security_dominates(&a, &a));
        }

        #[test]
        fn dominance_is_antisymmetric(a in arb_profile(), b in arb_profile()) {
            if security_dominates(&a, &b) && security_dominates(&b, &a) {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn dominance_is_transitive(a in arb_profile(), b in arb_profile(), c in arb_profile()) {
            if security_dominates(&a, &b) && security_dominates(&b, &c) {
                prop_assert!(security_dominates(&a, &c));
            }
        }

        #[test]
        fn relaxing_security_never_unmatches(
            q_path in arb_path(), c_path in arb_path(),
            offered in arb_profile(), strict in arb_profile(),
            drop_level in 0u8..3, keep_mask in any::<u8>(), drop_signing in any::<bool>(),
        ) {
            let relaxed = relax(&strict, drop_level, keep_mask, drop_signing);
            prop_assert!(security_dominates(&strict, &relaxed));
            let c = cap_with(c_path, offered);
            let mut q = CapabilityQuery::new(q_path);
            q.security_reqs = strict;
            let before = match_capability(&q, &c).matched;
            q.security_reqs = relaxed;
            let after = match_capability(&q, &c).matched;
            prop_assert!(!before || after);
        }

        #[test]
        fn similarity_is_symmetric(a in arb_path(), b in arb_path()) {
            let sec = SecurityProfile::default();
            let ab = match_capability(&CapabilityQuery::new(a.clone()), &cap_with(b.clone(), sec.clone())).similarity;
            let ba = match_capability(&CapabilityQuery::new(b), &cap_with(a, sec)).similarity;
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }

    fn relax(p: &SecurityProfile, drop_level: u8, keep_mask: u8, drop_signing: bool) -> SecurityProfile {
        let level = (p.encryption_level as u8).saturating_sub(drop_level);
        SecurityProfile {
            encryption_level: match level {
                0 => EncryptionLevel::None,
                1 => EncryptionLevel::Basic,
                _ => EncryptionLevel::Advanced,
            },
            certifications: p
                .certifications
                .iter()
                .enumerate()
                .filter(|(i, _)| keep_mask & (1 << i) != 0)
                .map(|(_, c)| c.clone())
                .collect(),
            signing_required: p.signing_required && !drop_signing,
        }
    }

    fn cap_with(desc: OntologyPath, security: SecurityProfile) -> CapabilitySpec {
        CapabilitySpec { desc, input: vec![], output: vec![], constraints: Constraints::new(), security }
    }
}
