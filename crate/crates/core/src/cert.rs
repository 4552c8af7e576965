//! One-level certificates: a test CA vouches for an agent's key and the
//! certification strings it may claim.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::crypto::{verify_with, KeyPair, PublicKey, Signer};
use crate::encoding::canonical_encode;
use crate::model::AgentId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub subject: AgentId,
    pub public_key: PublicKey,
    #[serde(default)]
    pub certifications: BTreeSet<String>,
    pub issuer: String,
    pub issuer_key: PublicKey,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Serialize)]
struct CertificateBody<'a> {
    subject: &'a AgentId,
    public_key: &'a PublicKey,
    certifications: &'a BTreeSet<String>,
    issuer: &'a str,
    issuer_key: &'a PublicKey,
}

impl Certificate {
    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical_encode(&CertificateBody {
            subject: &self.subject,
            public_key: &self.public_key,
            certifications: &self.certifications,
            issuer: &self.issuer,
            issuer_key: &self.issuer_key,
        })
        .expect("certificate fields are always encodable")
    }

    /// Issued by `ca_root` and the signature holds.
    pub fn chains_to(&self, ca_root: &PublicKey) -> bool {
        self.issuer_key == *ca_root && verify_with(ca_root, &self.signing_bytes(), &self.signature)
    }
}

#[derive(Debug, Clone)]
pub struct CertificateAuthority {
    name: String,
    key: KeyPair,
}

impl CertificateAuthority {
    pub fn new(name: impl Into<String>, key: KeyPair) -> Self {
        CertificateAuthority { name: name.into(), key }
    }

    pub fn from_seed(name: impl Into<String>, seed: &[u8]) -> Self {
        Self::new(name, KeyPair::from_seed(seed))
    }

    pub fn root(&self) -> PublicKey {
        self.key.public()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn issue<I, S>(&self, subject: AgentId, public_key: PublicKey, certifications: I) -> Certificate
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut cert = Certificate {
            subject,
            public_key,
            certifications: certifications.into_iter().map(Into::into).collect(),
            issuer: self.name.clone(),
            issuer_key: self.key.public(),
            signature: Vec::new(),
        };
        cert.signature = self.key.sign_bytes(&cert.signing_bytes());
        cert
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn issued_certificate_chains_only_to_its_ca() {
        let ca = CertificateAuthority::from_seed("test-ca", b"ca");
        let other = CertificateAuthority::from_seed("rogue-ca", b"rogue");
        let agent = KeyPair::from_seed(b"agent");
        let cert = ca.issue(AgentId::new("A", "ns").unwrap(), agent.public(), ["legal-certified"]);
        assert!(cert.chains_to(&ca.root()));
        assert!(!cert.chains_to(&other.root()));

        let mut forged = cert.clone();
        forged.certifications.insert("gov-clearance".into());
        assert!(!forged.chains_to(&ca.root()));
    }
}
