use serde::{Deserialize, Serialize};

use super::{AgentId, CapabilitySpec, ModelError};
use crate::cert::Certificate;
use crate::crypto::{sha3, verify_with, Hash32, PublicKey, Signer};
use crate::encoding::canonical_encode;

/// Reputation assumed for agents whose record carries none.
pub const DEFAULT_REPUTATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnriSecurity {
    pub public_key: PublicKey,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnriMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reputation: Option<f64>,
    pub cost_per_unit: f64,
    pub registered_at: u64,
    pub ttl_ms: u64,
    /// Explicit risk estimate; when absent scoring derives one from reputation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<f64>,
}

impl AnriMetadata {
    pub fn reputation_or_default(&self) -> f64 {
        self.reputation.unwrap_or(DEFAULT_REPUTATION)
    }

    pub fn expires_at(&self) -> u64 {
        self.registered_at.saturating_add(self.ttl_ms)
    }
}

/// Agent Name Resolution Item: the signed record an agent publishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anri {
    pub id: AgentId,
    pub capabilities: Vec<CapabilitySpec>,
    pub location: String,
    pub security: AnriSecurity,
    pub metadata: AnriMetadata,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Serialize)]
struct AnriBody<'a> {
    id: &'a AgentId,
    capabilities: &'a [CapabilitySpec],
    location: &'a str,
    security: &'a AnriSecurity,
    metadata: &'a AnriMetadata,
}

impl Anri {
    /// Canonical encoding of every field except the signature.
    pub fn signing_bytes(&self) -> Result<Vec<u8>, crate::encoding::EncodingError> {
        canonical_encode(&AnriBody {
            id: &self.id,
            capabilities: &self.capabilities,
            location: &self.location,
            security: &self.security,
            metadata: &self.metadata,
        })
    }

    pub fn sign(&mut self, signer: &dyn Signer) -> Result<(), crate::encoding::EncodingError> {
        self.signature = signer.sign_bytes(&self.signing_bytes()?);
        Ok(())
    }

    pub fn self_signature_valid(&self) -> bool {
        match self.signing_bytes() {
            Ok(bytes) => verify_with(&self.security.public_key, &bytes, &self.signature),
            Err(_) => false,
        }
    }

    /// SHA3-256 of the full canonical record, signature included.
    pub fn record_hash(&self) -> Hash32 {
        sha3(&canonical_encode(self).expect("validated records encode"))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.capabilities.is_empty() {
            return Err(ModelError::InvalidAnri("capabilities must be nonempty".into()));
        }
        for cap in &self.capabilities {
            cap.validate()?;
        }
        let m = &self.metadata;
        if m.ttl_ms == 0 {
            return Err(ModelError::InvalidAnri("ttl_ms must be positive".into()));
        }
        if let Some(r) = m.reputation {
            if !(0.0..=1.0).contains(&r) {
                return Err(ModelError::InvalidAnri(format!("reputation {r} outside [0,1]")));
            }
        }
        if let Some(r) = m.risk {
            if !(0.0..=1.0).contains(&r) {
                return Err(ModelError::InvalidAnri(format!("risk {r} outside [0,1]")));
            }
        }
        if !m.cost_per_unit.is_finite() || m.cost_per_unit < 0.0 {
            return Err(ModelError::InvalidAnri(format!("cost_per_unit {} must be >= 0", m.cost_per_unit)));
        }
        Ok(())
    }
}
