use serde::{Deserialize, Serialize};

use super::commitment::Terms;
use super::SessionRecord;
use crate::model::{
    constraint_violations, match_capability, security_dominates, CapabilityQuery, CapabilitySpec, Slot,
};

pub const MS_PER_HOUR: u64 = 3_600_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Syntactic,
    Semantic,
    Operational,
    Security,
    Temporal,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Syntactic => "syntactic",
            Dimension::Semantic => "semantic",
            Dimension::Operational => "operational",
            Dimension::Security => "security",
            Dimension::Temporal => "temporal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyFailure {
    pub dimension: Dimension,
    pub detail: String,
}

fn slot_failures(kind: &str, wanted: &[Slot], offered: &[Slot], out: &mut Vec<ConsistencyFailure>) {
    for w in wanted {
        match offered.iter().find(|o| o.name == w.name) {
            None => out.push(ConsistencyFailure {
                dimension: Dimension::Syntactic,
                detail: format!("{kind} slot {:?} missing", w.name),
            }),
            Some(o) if o.type_tag != w.type_tag => out.push(ConsistencyFailure {
                dimension: Dimension::Syntactic,
                detail: format!("{kind} slot {:?} is {:?}, expected {:?}", w.name, o.type_tag, w.type_tag),
            }),
            Some(_) => {}
        }
    }
}

/// Latest acceptable completion time implied by the query's deadline
/// constraint, counted from session establishment.
pub fn query_deadline_ms(query: &CapabilityQuery, established_at: u64) -> Option<u64> {
    let hours = query.constraints.get("deadline_hours").map(|v| v.as_f64() * MS_PER_HOUR as f64);
    let ms = query.constraints.get("deadline_ms").map(|v| v.as_f64());
    let span = match (hours, ms) {
        (Some(a), Some(b)) => a.min(b),
        (a, b) => a.or(b)?,
    };
    Some(established_at.saturating_add(span as u64))
}

/// Runs all five checks and reports every failure.
pub fn consistency_check(
    query: &CapabilityQuery,
    offered: &CapabilitySpec,
    session: &SessionRecord,
    terms: &Terms,
) -> Result<(), Vec<ConsistencyFailure>> {
    let mut failures = Vec::new();
    slot_failures("input", &query.input, &offered.input, &mut failures);
    slot_failures("output", &query.output, &offered.output, &mut failures);
    if !match_capability(query, offered).matched {
        failures.push(ConsistencyFailure {
            dimension: Dimension::Semantic,
            detail: format!("{} does not match {}", offered.desc, query.required),
        });
    }
    for key in constraint_violations(&query.constraints, &offered.constraints) {
        failures.push(ConsistencyFailure { dimension: Dimension::Operational, detail: format!("{key} unmet") });
    }
    if !security_dominates(&offered.security, &query.security_reqs) {
        failures.push(ConsistencyFailure {
            dimension: Dimension::Security,
            detail: "offered security below requirement".into(),
        });
    }
    if let Some(limit) = query_deadline_ms(query, session.established_at) {
        if terms.deadline_ms > limit {
            failures.push(ConsistencyFailure {
                dimension: Dimension::Temporal,
                detail: format!("deadline {} after {}", terms.deadline_ms, limit),
            });
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(failures)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::capability;
    use crate::model::{EncryptionLevel, NegotiatedExtension, OntologyPath, Scalar, SecurityProfile, Version};

    fn query() -> CapabilityQuery {
        let mut q = CapabilityQuery::new(OntologyPath::new(["translation", "legal", "en-fr"]).unwrap());
        q.constraints.insert("deadline_hours".into(), Scalar::Int(24));
        q.security_reqs = SecurityProfile::new(EncryptionLevel::Basic, Vec::<String>::new(), true);
        q.input = vec![Slot::new("text", "string")];
        q.output = vec![Slot::new("text", "string")];
        q
    }

    fn session() -> SessionRecord {
        SessionRecord {
            session_id: crate::envelope::SessionId([0; 16]),
            negotiated: NegotiatedExtension { version: Version::new(1, 0, 0), extensions: Default::default() },
            session_key: [0; 32],
            peer_extension_list_hash: [0; 32],
            established_at: 1_000,
        }
    }

    fn offer() -> CapabilitySpec {
        capability(
            &["translation", "legal", "en-fr"],
            EncryptionLevel::Advanced,
            &["gov-clearance", "legal-certified"],
            true,
            &[("deadline_hours", Scalar::Int(24))],
        )
    }

    fn terms(hours: u64) -> Terms {
        Terms { price: 0.8, deadline_ms: 1_000 + hours * MS_PER_HOUR, quality_min: 0.95, penalty: 0.08 }
    }

    #[test]
    fn government_offer_passes() {
        assert_eq!(consistency_check(&query(), &offer(), &session(), &terms(24)), Ok(()));
    }

    #[test]
    fn missing_input_slot_is_syntactic() {
        let mut o = offer();
        o.input.clear();
        let f = consistency_check(&query(), &o, &session(), &terms(24)).unwrap_err();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].dimension, Dimension::Syntactic);
        assert!(f[0].detail.contains("\"text\""));
    }

    #[test]
    fn late_deadline_is_temporal() {
        let f = consistency_check(&query(), &offer(), &session(), &terms(48)).unwrap_err();
        assert_eq!(f.iter().map(|x| x.dimension).collect::<Vec<_>>(), [Dimension::Temporal]);
    }

    #[test]
    fn weak_offer_reports_every_dimension() {
        let mut o = capability(&["vision"], EncryptionLevel::None, &[], false, &[("deadline_hours", Scalar::Int(48))]);
        o.output[0].type_tag = "image".into();
        let dims: Vec<Dimension> = consistency_check(&query(), &o, &session(), &terms(48))
            .unwrap_err()
            .iter()
            .map(|x| x.dimension)
            .collect();
        assert_eq!(
            dims,
            [Dimension::Syntactic, Dimension::Semantic, Dimension::Operational, Dimension::Security, Dimension::Temporal]
        );
    }
}
