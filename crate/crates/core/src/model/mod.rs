//! Domain types shared by every protocol participant.

mod anri;
mod extension;
mod matching;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use anri::{Anri, AnriMetadata, AnriSecurity, DEFAULT_REPUTATION};
pub use extension::{negotiate_extension, NegotiatedExtension, ProtocolExtension, Version};
pub use matching::{
    constraint_satisfied, constraint_violations, match_capability, match_semantics,
    security_dominates, MatchResult,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid agent id: {0}")]
    InvalidAgentId(String),
    #[error("invalid ontology path: {0}")]
    InvalidOntology(String),
    #[error("invalid capability: {0}")]
    InvalidCapability(String),
    #[error("invalid protocol extension: {0}")]
    InvalidExtension(String),
    #[error("invalid version {0:?}")]
    InvalidVersion(String),
    #[error("invalid ANRI: {0}")]
    InvalidAnri(String),
    #[error("incompatible protocol versions: {mine} vs {theirs}")]
    IncompatibleVersions { mine: String, theirs: String },
}

/// Globally unique agent identifier: a display name within a dotted
/// namespace such as `translation.gov`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawAgentId")]
pub struct AgentId {
    name: String,
    namespace: String,
}

#[derive(Deserialize)]
struct RawAgentId {
    name: String,
    namespace: String,
}

impl TryFrom<RawAgentId> for AgentId {
    type Error = ModelError;
    fn try_from(raw: RawAgentId) -> Result<Self, ModelError> {
        AgentId::new(raw.name, raw.namespace)
    }
}

impl AgentId {
    pub const MAX_NAME_BYTES: usize = 255;

    pub fn new(name: impl Into<String>, namespace: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        let namespace = namespace.into();
        if name.is_empty() || name.len() > Self::MAX_NAME_BYTES {
            return Err(ModelError::InvalidAgentId(format!(
                "name must be 1..={} bytes, got {}",
                Self::MAX_NAME_BYTES,
                name.len()
            )));
        }
        let segment_ok = |s: &str| {
            !s.is_empty()
                && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
        };
        if !namespace.split('.').all(segment_ok) {
            return Err(ModelError::InvalidAgentId(format!("bad namespace {namespace:?}")));
        }
        Ok(AgentId { name, namespace })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.namespace)
    }
}

impl std::str::FromStr for AgentId {
    type Err = ModelError;
    /// Parses the `name@namespace` display form.
    fn from_str(s: &str) -> Result<Self, ModelError> {
        let (name, ns) = s
            .rsplit_once('@')
            .ok_or_else(|| ModelError::InvalidAgentId(format!("{s:?} is not name@namespace")))?;
        AgentId::new(name, ns)
    }
}

/// Serde adapter for maps keyed by [`AgentId`], writing keys in
/// `name@namespace` form so the map stays a JSON object.
pub mod agent_map {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::AgentId;

    pub fn serialize<V: Serialize, S: Serializer>(m: &BTreeMap<AgentId, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(m.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, V: Deserialize<'de>, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<AgentId, V>, D::Error> {
        BTreeMap::<String, V>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| Ok((k.parse().map_err(D::Error::custom)?, v)))
            .collect()
    }
}

impl fmt::Debug for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AgentId({self})")
    }
}

/// Hierarchical capability tag, most general segment first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct OntologyPath(Vec<String>);

impl OntologyPath {
    pub const MAX_SEGMENTS: usize = 8;

    pub fn new<I, S>(segments: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.is_empty() || segments.len() > Self::MAX_SEGMENTS {
            return Err(ModelError::InvalidOntology(format!(
                "expected 1..={} segments, got {}",
                Self::MAX_SEGMENTS,
                segments.len()
            )));
        }
        for s in &segments {
            if s.is_empty() || s.chars().any(char::is_uppercase) {
                return Err(ModelError::InvalidOntology(format!("bad segment {s:?}")));
            }
        }
        Ok(OntologyPath(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn shared_prefix_len(&self, other: &OntologyPath) -> usize {
        self.0.iter().zip(&other.0).take_while(|(a, b)| a == b).count()
    }

    pub fn is_prefix_of(&self, other: &OntologyPath) -> bool {
        self.len() <= other.len() && self.shared_prefix_len(other) == self.len()
    }
}

impl TryFrom<Vec<String>> for OntologyPath {
    type Error = ModelError;
    fn try_from(v: Vec<String>) -> Result<Self, ModelError> {
        OntologyPath::new(v)
    }
}

impl From<OntologyPath> for Vec<String> {
    fn from(p: OntologyPath) -> Self {
        p.0
    }
}

impl fmt::Display for OntologyPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

/// A named input or output parameter with its semantic type tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    #[serde(rename = "type")]
    pub type_tag: String,
}

impl Slot {
    pub fn new(name: impl Into<String>, type_tag: impl Into<String>) -> Self {
        Slot { name: name.into(), type_tag: type_tag.into() }
    }
}

/// Constraint value. Integers and reals are kept apart so that fixtures
/// round-trip exactly; comparisons are numeric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i64),
    Real(f64),
}

impl Scalar {
    pub fn as_f64(self) -> f64 {
        match self {
            Scalar::Int(i) => i as f64,
            Scalar::Real(r) => r,
        }
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Real(v)
    }
}

pub type Constraints = BTreeMap<String, Scalar>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncryptionLevel {
    #[default]
    None = 0,
    Basic = 1,
    Advanced = 2,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct SecurityProfile {
    pub encryption_level: EncryptionLevel,
    #[serde(default)]
    pub certifications: BTreeSet<String>,
    #[serde(default)]
    pub signing_required: bool,
}

impl SecurityProfile {
    pub fn new<I, S>(encryption_level: EncryptionLevel, certifications: I, signing_required: bool) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SecurityProfile {
            encryption_level,
            certifications: certifications.into_iter().map(Into::into).collect(),
            signing_required,
        }
    }
}

/// An advertised capability: description, interface, limits and security.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilitySpec {
    pub desc: OntologyPath,
    #[serde(default)]
    pub input: Vec<Slot>,
    #[serde(default)]
    pub output: Vec<Slot>,
    #[serde(default)]
    pub constraints: Constraints,
    pub security: SecurityProfile,
}

fn check_unique_slots(kind: &str, slots: &[Slot]) -> Result<(), ModelError> {
    let mut seen = BTreeSet::new();
    for s in slots {
        if !seen.insert(&s.name) {
            return Err(ModelError::InvalidCapability(format!("duplicate {kind} slot {:?}", s.name)));
        }
    }
    Ok(())
}

fn check_constraints(constraints: &Constraints) -> Result<(), ModelError> {
    for (k, v) in constraints {
        let x = v.as_f64();
        if !x.is_finite() || x < 0.0 {
            return Err(ModelError::InvalidCapability(format!("constraint {k} must be nonnegative, got {x}")));
        }
    }
    Ok(())
}

impl CapabilitySpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        check_unique_slots("input", &self.input)?;
        check_unique_slots("output", &self.output)?;
        check_constraints(&self.constraints)
    }
}

/// What a requester is looking for.
///
/// `input` and `output` name the interface the requester will drive; they
/// feed the syntactic consistency check and may be left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityQuery {
    pub required: OntologyPath,
    #[serde(default)]
    pub constraints: Constraints,
    #[serde(default)]
    pub security_reqs: SecurityProfile,
    #[serde(default)]
    pub input: Vec<Slot>,
    #[serde(default)]
    pub output: Vec<Slot>,
}

impl CapabilityQuery {
    pub fn new(required: OntologyPath) -> Self {
        CapabilityQuery {
            required,
            constraints: Constraints::new(),
            security_reqs: SecurityProfile::default(),
            input: Vec::new(),
            output: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_unique_slots("input", &self.input)?;
        check_unique_slots("output", &self.output)?;
        check_constraints(&self.constraints)
    }
}
