//! Candidate pre-screening and selection.
//!
//! Five phases per candidate: semantic compatibility, credentials and
//! security, reputation, cohort-relative cost, and risk. The first two are
//! hard gates; the rest feed a weighted sum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::PublicKey;
use crate::model::{match_semantics, security_dominates, AgentId, Anri, CapabilityQuery};
use crate::registry::verify_anri;

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightsError {
    #[error("weight {name} = {value} must be finite and nonnegative")]
    Negative { name: &'static str, value: f64 },
    #[error("weights sum to {0}, expected 1")]
    BadSum(f64),
    #[error("expected 5 comma-separated weights, got {0:?}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringWeights {
    pub w_compat: f64,
    pub w_security: f64,
    pub w_reputation: f64,
    pub w_cost: f64,
    pub w_risk: f64,
}

impl Default for ScoringWeights {
    fn default() -> Self {
        ScoringWeights { w_compat: 0.30, w_security: 0.25, w_reputation: 0.20, w_cost: 0.15, w_risk: 0.10 }
    }
}

impl ScoringWeights {
    pub fn new(w: [f64; 5]) -> Result<Self, WeightsError> {
        let weights =
            ScoringWeights { w_compat: w[0], w_security: w[1], w_reputation: w[2], w_cost: w[3], w_risk: w[4] };
        weights.validate()?;
        Ok(weights)
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.w_compat, self.w_security, self.w_reputation, self.w_cost, self.w_risk]
    }

    pub fn validate(&self) -> Result<(), WeightsError> {
        const NAMES: [&str; 5] = ["w_compat", "w_security", "w_reputation", "w_cost", "w_risk"];
        for (name, value) in NAMES.into_iter().zip(self.as_array()) {
            if !value.is_finite() || value < 0.0 {
                return Err(WeightsError::Negative { name, value });
            }
        }
        let sum: f64 = self.as_array().iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(WeightsError::BadSum(sum));
        }
        Ok(())
    }
}

impl std::str::FromStr for ScoringWeights {
    type Err = WeightsError;

    /// Parses `a,b,c,d,e` in the order compat, security, reputation, cost, risk.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
        match parts {
            Ok(v) if v.len() == 5 => ScoringWeights::new([v[0], v[1], v[2], v[3], v[4]]),
            _ => Err(WeightsError::Parse(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EliminationReason {
    Compatibility,
    Security,
}

impl EliminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            EliminationReason::Compatibility => "compatibility",
            EliminationReason::Security => "security",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub agent: AgentId,
    /// Index of the capability the score refers to.
    pub capability: Option<usize>,
    pub compatibility: f64,
    pub security_ok: bool,
    pub reputation: f64,
    pub cost_utility: f64,
    pub risk: f64,
    pub total: f64,
    pub eliminated: bool,
    pub elimination_reason: Option<EliminationReason>,
}

/// `min_cost / cost` clamped to [0, 1]; a free candidate scores 1.
pub fn cost_utility(cost: f64, cohort_min_cost: f64) -> f64 {
    if cost <= 0.0 {
        1.0
    } else {
        (cohort_min_cost / cost).clamp(0.0, 1.0)
    }
}

struct Screened {
    agent: AgentId,
    capability: Option<usize>,
    compatibility: f64,
    reason: Option<EliminationReason>,
}

fn screen(query: &CapabilityQuery, anri: &Anri, ca_root: &PublicKey) -> Screened {
    let semantic: Vec<(usize, f64)> = anri
        .capabilities
        .iter()
        .enumerate()
        .map(|(i, c)| (i, match_semantics(query, c)))
        .filter(|(_, m)| m.matched)
        .map(|(i, m)| (i, m.similarity))
        .collect();
    let best = |it: &mut dyn Iterator<Item = (usize, f64)>| {
        it.fold(None, |acc: Option<(usize, f64)>, (i, s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((i, s)),
        })
    };
    let Some((first, first_sim)) = best(&mut semantic.iter().copied()) else {
        return Screened {
            agent: anri.id.clone(),
            capability: None,
            compatibility: 0.0,
            reason: Some(EliminationReason::Compatibility),
        };
    };
    let credentials_ok = verify_anri(anri, ca_root);
    let secure = best(
        &mut semantic
            .iter()
            .copied()
            .filter(|(i, _)| security_dominates(&anri.capabilities[*i].security, &query.security_reqs)),
    );
    match (credentials_ok, secure) {
        (true, Some((i, s))) => {
            Screened { agent: anri.id.clone(), capability: Some(i), compatibility: s, reason: None }
        }
        _ => Screened {
            agent: anri.id.clone(),
            capability: Some(first),
            compatibility: first_sim,
            reason: Some(EliminationReason::Security),
        },
    }
}

fn score(s: Screened, anri: &Anri, weights: &ScoringWeights, cohort_min_cost: f64) -> CandidateScore {
    let reputation = anri.metadata.reputation_or_default();
    let risk = anri.metadata.risk.unwrap_or(1.0 - reputation);
    let cu = cost_utility(anri.metadata.cost_per_unit, cohort_min_cost);
    let eliminated = s.reason.is_some();
    let total = if eliminated {
        0.0
    } else {
        weights.w_compat * s.compatibility
            + weights.w_security
            + weights.w_reputation * reputation
            + weights.w_cost * cu
            + weights.w_risk * (1.0 - risk)
    };
    CandidateScore {
        agent: s.agent,
        capability: s.capability,
        compatibility: s.compatibility,
        security_ok: !eliminated,
        reputation,
        cost_utility: cu,
        risk,
        total,
        eliminated,
        elimination_reason: s.reason,
    }
}

/// Scores one candidate against a known cohort minimum cost.
pub fn evaluate_candidate(
    query: &CapabilityQuery,
    anri: &Anri,
    weights: &ScoringWeights,
    ca_root: &PublicKey,
    cohort_min_cost: f64,
) -> CandidateScore {
    score(screen(query, anri, ca_root), anri, weights, cohort_min_cost)
}

/// Scores every candidate. The cost baseline is the cheapest candidate that
/// survives the compatibility and security gates.
pub fn evaluate_cohort(
    query: &CapabilityQuery,
    candidates: &[Anri],
    weights: &ScoringWeights,
    ca_root: &PublicKey,
) -> Vec<CandidateScore> {
    let screened: Vec<Screened> = candidates.iter().map(|a| screen(query, a, ca_root)).collect();
    let min_cost = screened
        .iter()
        .zip(candidates)
        .filter(|(s, _)| s.reason.is_none())
        .map(|(_, a)| a.metadata.cost_per_unit)
        .fold(f64::INFINITY, f64::min);
    screened.into_iter().zip(candidates).map(|(s, a)| score(s, a, weights, min_cost)).collect()
}

/// Survivors by total descending, ties by agent id.
pub fn rank_candidates(scores: &[CandidateScore]) -> Vec<AgentId> {
    let mut survivors: Vec<&CandidateScore> = scores.iter().filter(|s| !s.eliminated).collect();
    survivors.sort_by(|a, b| b.total.total_cmp(&a.total).then_with(|| a.agent.cmp(&b.agent)));
    survivors.into_iter().map(|s| s.agent.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cert::CertificateAuthority;
    use crate::crypto::KeyPair;
    use crate::fixture::{agent_id, capability, metadata, signed_anri};
    use crate::model::{EncryptionLevel, OntologyPath, Scalar, SecurityProfile};
    use proptest::prelude::*;

    const PATH: [&str; 3] = ["translation", "legal", "en-fr"];

    fn ca() -> CertificateAuthority {
        CertificateAuthority::from_seed("test-ca", b"ca")
    }

    fn query() -> CapabilityQuery {
        let mut q = CapabilityQuery::new(OntologyPath::new(PATH).unwrap());
        q.constraints.insert("deadline_hours".into(), Scalar::Int(24));
        q.security_reqs = SecurityProfile::new(EncryptionLevel::Basic, Vec::<String>::new(), true);
        q
    }

    fn agent(
        ca: &CertificateAuthority,
        name: &str,
        rep: f64,
        cost: f64,
        level: EncryptionLevel,
        certs: &[&str],
        signing: bool,
        hours: i64,
    ) -> Anri {
        let cap = capability(&PATH, level, certs, signing, &[("deadline_hours", Scalar::Int(hours))]);
        signed_anri(
            ca,
            &KeyPair::from_seed(name.as_bytes()),
            agent_id(name, "translators"),
            vec![cap],
            "sim://t",
            metadata(Some(rep), cost, 0, 86_400_000),
        )
    }

    fn cohort(ca: &CertificateAuthority) -> Vec<Anri> {
        use EncryptionLevel::*;
        vec![
            agent(ca, "TranslatorA_Corp", 0.92, 0.12, Advanced, &["iso-17100", "legal-certified"], true, 24),
            agent(ca, "TranslatorB_Fast", 0.55, 0.04, Basic, &[], true, 2),
            agent(ca, "TranslatorC_Gov", 0.95, 0.08, Advanced, &["gov-clearance", "legal-certified"], true, 24),
            agent(ca, "TranslatorD_Basic", 0.50, 0.02, None, &[], false, 24),
        ]
    }

    #[test]
    fn translation_cohort_totals_and_ranking() {
        let ca = ca();
        let scores = evaluate_cohort(&query(), &cohort(&ca), &ScoringWeights::default(), &ca.root());
        // Hand evaluation with B (0.04) as cheapest survivor:
        // A: .30 + .25 + .20*.92 + .15*(.04/.12) + .10*.92 = 0.876
        // B: .30 + .25 + .20*.55 + .15*1        + .10*.55 = 0.865
        // C: .30 + .25 + .20*.95 + .15*.5       + .10*.95 = 0.910
        let expect = [0.876, 0.865, 0.910, 0.0];
        for (s, e) in scores.iter().zip(expect) {
            assert!((s.total - e).abs() < 1e-12, "{} {} vs {}", s.agent, s.total, e);
        }
        assert_eq!(scores[3].elimination_reason, Some(EliminationReason::Security));
        let names: Vec<_> = rank_candidates(&scores).iter().map(|a| a.name().to_owned()).collect();
        assert_eq!(names, ["TranslatorC_Gov", "TranslatorA_Corp", "TranslatorB_Fast"]);
    }

    #[test]
    fn pure_cost_weights_pick_cheapest_survivor() {
        let ca = ca();
        let w = ScoringWeights::new([0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let scores = evaluate_cohort(&query(), &cohort(&ca), &w, &ca.root());
        assert_eq!(rank_candidates(&scores)[0].name(), "TranslatorB_Fast");
    }

    #[test]
    fn neutral_cheapest_perfect_match() {
        let ca = ca();
        let a = agent(&ca, "N", 0.5, 0.3, EncryptionLevel::Advanced, &[], true, 24);
        let w = ScoringWeights::new([0.1, 0.2, 0.3, 0.25, 0.15]).unwrap();
        let s = evaluate_candidate(&query(), &a, &w, &ca.root(), 0.3);
        let expect = 0.1 + 0.2 + 0.5 * 0.3 + 0.25 + 0.5 * 0.15;
        assert!((s.total - expect).abs() < 1e-12);
    }

    #[test]
    fn missing_reputation_defaults_to_half() {
        let ca = ca();
        let mut a = agent(&ca, "N", 0.9, 0.3, EncryptionLevel::Advanced, &[], true, 24);
        a.metadata.reputation = None;
        a.sign(&KeyPair::from_seed(b"N")).unwrap();
        let s = evaluate_candidate(&query(), &a, &ScoringWeights::default(), &ca.root(), 0.3);
        assert_eq!(s.reputation, 0.5);
        assert_eq!(s.risk, 0.5);
    }

    #[test]
    fn incompatible_and_forged_candidates_are_eliminated() {
        let ca = ca();
        let mut slow = agent(&ca, "Slow", 0.9, 0.1, EncryptionLevel::Advanced, &[], true, 48);
        let s = evaluate_candidate(&query(), &slow, &ScoringWeights::default(), &ca.root(), 0.1);
        assert_eq!(s.elimination_reason, Some(EliminationReason::Compatibility));
        assert_eq!(s.total, 0.0);

        slow.capabilities[0].constraints.insert("deadline_hours".into(), Scalar::Int(12));
        let s = evaluate_candidate(&query(), &slow, &ScoringWeights::default(), &ca.root(), 0.1);
        assert_eq!(s.elimination_reason, Some(EliminationReason::Security), "signature no longer holds");
    }

    #[test]
    fn compat_only_weights_follow_similarity() {
        let ca = ca();
        let mut q = query();
        q.required = OntologyPath::new(["translation"]).unwrap();
        let long = agent(&ca, "Long", 0.1, 9.0, EncryptionLevel::Advanced, &[], true, 1);
        let key = KeyPair::from_seed(b"Exact");
        let exact = signed_anri(
            &ca,
            &key,
            agent_id("Exact", "translators"),
            vec![capability(&["translation"], EncryptionLevel::Basic, &[], true, &[("deadline_hours", Scalar::Int(1))])],
            "sim://e",
            metadata(Some(0.0), 100.0, 0, 1000),
        );
        let w = ScoringWeights::new([1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let scores = evaluate_cohort(&q, &[long, exact], &w, &ca.root());
        assert_eq!(rank_candidates(&scores)[0].name(), "Exact");
    }

    #[test]
    fn equal_totals_break_ties_by_id() {
        let ca = ca();
        let a = agent(&ca, "Beta", 0.7, 0.1, EncryptionLevel::Advanced, &[], true, 24);
        let b = agent(&ca, "Alpha", 0.7, 0.1, EncryptionLevel::Advanced, &[], true, 24);
        let scores = evaluate_cohort(&query(), &[a, b], &ScoringWeights::default(), &ca.root());
        assert_eq!(scores[0].total, scores[1].total);
        let names: Vec<_> = rank_candidates(&scores).iter().map(|a| a.name().to_owned()).collect();
        assert_eq!(names, ["Alpha", "Beta"]);
        assert!(rank_candidates(&[]).is_empty());
    }

    #[test]
    fn weights_validation() {
        assert!(ScoringWeights::default().validate().is_ok());
        assert!(matches!(ScoringWeights::new([0.5, 0.5, 0.5, 0.0, 0.0]), Err(WeightsError::BadSum(_))));
        assert!(matches!(ScoringWeights::new([-0.1, 0.5, 0.6, 0.0, 0.0]), Err(WeightsError::Negative { .. })));
        assert_eq!("0,0,0,1,0".parse::<ScoringWeights>().unwrap().w_cost, 1.0);
        assert!("1,2".parse::<ScoringWeights>().is_err());
    }

    fn arb_cohort() -> impl Strategy<Value = Vec<(f64, f64, u8, bool)>> {
        proptest::collection::vec((0.0f64..=1.0, 0.01f64..10.0, 0u8..3, any::<bool>()), 1..7)
    }

    fn build(ca: &CertificateAuthority, spec: &[(f64, f64, u8, bool)], scale: f64) -> Vec<Anri> {
        spec.iter()
            .enumerate()
            .map(|(i, &(rep, cost, lvl, sign))| {
                let level = [EncryptionLevel::None, EncryptionLevel::Basic, EncryptionLevel::Advanced][lvl as usize];
                agent(ca, &format!("Agent{i}"), rep, cost * scale, level, &[], sign, 24)
            })
            .collect()
    }

    fn arb_weights() -> impl Strategy<Value = ScoringWeights> {
        proptest::collection::vec(0.01f64..1.0, 5).prop_map(|v| {
            let s: f64 = v.iter().sum();
            ScoringWeights::new([v[0] / s, v[1] / s, v[2] / s, v[3] / s, v[4] / s]).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ranking_invariant_under_cost_scaling(spec in arb_cohort(), k in 0.01f64..100.0, w in arb_weights()) {
            let ca = ca();
            let base = evaluate_cohort(&query(), &build(&ca, &spec, 1.0), &w, &ca.root());
            let scaled = evaluate_cohort(&query(), &build(&ca, &spec, k), &w, &ca.root());
            prop_assert_eq!(rank_candidates(&base), rank_candidates(&scaled));
        }

        #[test]
        fn eliminated_never_outranks_survivor(spec in arb_cohort(), w in arb_weights()) {
            let ca = ca();
            let scores = evaluate_cohort(&query(), &build(&ca, &spec, 1.0), &w, &ca.root());
            let ranked = rank_candidates(&scores);
            for s in &scores {
                prop_assert_eq!(s.eliminated, !ranked.contains(&s.agent));
                if s.eliminated {
                    prop_assert_eq!(s.total, 0.0);
                }
            }
        }

        #[test]
        fn small_weight_perturbation_keeps_separated_ranking(
            spec in arb_cohort(), w in arb_weights(), idx in 0usize..5, up in any::<bool>(),
        ) {
            let ca = ca();
            let cands = build(&ca, &spec, 1.0);
            let scores = evaluate_cohort(&query(), &cands, &w, &ca.root());
            let mut totals: Vec<f64> = scores.iter().filter(|s| !s.eliminated).map(|s| s.total).collect();
            totals.sort_by(|a, b| b.total_cmp(a));
            prop_assume!(totals.windows(2).all(|p| p[0] - p[1] > 1e-3));
            let mut raw = w.as_array();
            raw[idx] = (raw[idx] + if up { 1e-6 } else { -1e-6 }).max(0.0);
            let s: f64 = raw.iter().sum();
            let w2 = ScoringWeights::new(raw.map(|x| x / s)).unwrap();
            let again = evaluate_cohort(&query(), &cands, &w2, &ca.root());
            prop_assert_eq!(rank_candidates(&scores), rank_candidates(&again));
        }

        #[test]
        fn evaluation_is_deterministic(spec in arb_cohort(), w in arb_weights()) {
            let ca = ca();
            let cands = build(&ca, &spec, 1.0);
            prop_assert_eq!(
                evaluate_cohort(&query(), &cands, &w, &ca.root()),
                evaluate_cohort(&query(), &cands, &w, &ca.root())
            );
        }
    }
}
