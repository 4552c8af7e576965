//! Message bodies. Each travels canonically encoded inside a
//! [`SignedEnvelope`](crate::envelope::SignedEnvelope); channel messages are
//! additionally sealed under the session key.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::commitment::BindingCommitment;
use crate::cert::Certificate;
use crate::crypto::Hash32;
use crate::model::{
    Anri, CapabilityQuery, CapabilitySpec, EncryptionLevel, NegotiatedExtension, ProtocolExtension, Version,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdQuery {
    pub query: CapabilityQuery,
    pub limit: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdResponse {
    pub candidates: Vec<Anri>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityParams {
    #[serde(with = "crate::encoding::hex_bytes")]
    pub ephemeral_public: [u8; 32],
    #[serde(with = "crate::encoding::hex_bytes")]
    pub nonce: [u8; 16],
    pub encryption_level: EncryptionLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ssr {
    pub requester: crate::model::AgentId,
    pub protocol_version: Version,
    pub security: SecurityParams,
    pub extension: ProtocolExtension,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sso {
    pub provider: crate::model::AgentId,
    pub capabilities: Vec<CapabilitySpec>,
    pub certificate: Certificate,
    pub extension: ProtocolExtension,
    pub security: SecurityParams,
    /// Hash of the SSR envelope this offer answers.
    #[serde(with = "crate::encoding::hex_bytes")]
    pub ssr_hash: Hash32,
}

/// Sent encrypted by the requester once it has derived the session key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseInit {
    pub negotiated: NegotiatedExtension,
    /// Version-list hash of the provider's extension as the requester saw it.
    #[serde(with = "crate::encoding::hex_bytes")]
    pub peer_list_hash: Hash32,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub own_list_hash: Hash32,
}

/// Encrypted reply to [`SseInit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseConfirm {
    pub negotiated: NegotiatedExtension,
    /// Version-list hash of the requester's extension as the provider saw it.
    #[serde(with = "crate::encoding::hex_bytes")]
    pub peer_list_hash: Hash32,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub own_list_hash: Hash32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsaAccept {
    /// Requester-signed draft; the provider countersigns it unchanged.
    pub draft: BindingCommitment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsaReject {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bc {
    pub commitment: BindingCommitment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub input: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    #[serde(default)]
    pub output: BTreeMap<String, String>,
    pub quality: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Body of COMMIT and ABORT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Wire form of an encrypted body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sealed {
    #[serde(with = "crate::encoding::hex_bytes")]
    pub ciphertext: Vec<u8>,
}
