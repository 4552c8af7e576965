use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Semantic version triple, ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Version {
    pub major: u32,
    pub minor: u32,
    pub patch: u32,
}

impl Version {
    pub const fn new(major: u32, minor: u32, patch: u32) -> Self {
        Version { major, minor, patch }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

impl FromStr for Version {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::InvalidVersion(s.to_owned());
        let mut parts = s.split('.').map(|p| {
            if p.is_empty() || (p.len() > 1 && p.starts_with('0')) {
                return Err(bad());
            }
            p.parse::<u32>().map_err(|_| bad())
        });
        let v = Version::new(
            parts.next().ok_or_else(bad)??,
            parts.next().ok_or_else(bad)??,
            parts.next().ok_or_else(bad)??,
        );
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(v)
    }
}

impl TryFrom<String> for Version {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, ModelError> {
        s.parse()
    }
}

impl From<Version> for String {
    fn from(v: Version) -> Self {
        v.to_string()
    }
}

/// Supported version range plus optional feature names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawExtension")]
pub struct ProtocolExtension {
    pub version: Version,
    pub extensions: BTreeSet<String>,
    pub compatibility: Version,
}

#[derive(Deserialize)]
struct RawExtension {
    version: Version,
    #[serde(default)]
    extensions: BTreeSet<String>,
    compatibility: Version,
}

impl TryFrom<RawExtension> for ProtocolExtension {
    type Error = ModelError;
    fn try_from(r: RawExtension) -> Result<Self, ModelError> {
        ProtocolExtension::new(r.version, r.compatibility, r.extensions)
    }
}

impl ProtocolExtension {
    pub fn new<I, S>(version: Version, compatibility: Version, extensions: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if compatibility > version {
            return Err(ModelError::InvalidExtension(format!(
                "compatibility {compatibility} exceeds version {version}"
            )));
        }
        Ok(ProtocolExtension {
            version,
            compatibility,
            extensions: extensions.into_iter().map(Into::into).collect(),
        })
    }

    /// Hash over the whole advertisement: version range and extension
    /// names, so stripping a version or slipping in a name both change it.
    pub fn advertisement_hash(&self) -> crate::crypto::Hash32 {
        let bytes = crate::encoding::canonical_encode(self).expect("extensions always encode");
        crate::crypto::sha3(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NegotiatedExtension {
    pub version: Version,
    pub extensions: BTreeSet<String>,
}

/// Picks the highest version both peers accept and intersects extension sets.
pub fn negotiate_extension(
    mine: &ProtocolExtension,
    theirs: &ProtocolExtension,
) -> Result<NegotiatedExtension, ModelError> {
    let ceiling = mine.version.min(theirs.version);
    let floor = mine.compatibility.max(theirs.compatibility);
    if ceiling < floor {
        return Err(ModelError::IncompatibleVersions {
            mine: format!("{}..={}", mine.compatibility, mine.version),
            theirs: format!("{}..={}", theirs.compatibility, theirs.version),
        });
    }
    Ok(NegotiatedExtension {
        version: ceiling,
        extensions: mine.extensions.intersection(&theirs.extensions).cloned().collect(),
    })
}
