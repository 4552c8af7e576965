use serde::{Deserialize, Serialize};

use super::NegotiationError;
use crate::crypto::{verify_with, PublicKey, Signer};
use crate::encoding::canonical_encode;
use crate::model::{AgentId, CapabilitySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    pub price: f64,
    pub deadline_ms: u64,
    pub quality_min: f64,
    pub penalty: f64,
}

/// Agreement fixing capability and terms, signed by both parties over the
/// canonical encoding of `{capability, provider, requester, terms}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingCommitment {
    pub requester: AgentId,
    pub provider: AgentId,
    pub capability: CapabilitySpec,
    pub terms: Terms,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub requester_signature: Vec<u8>,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub provider_signature: Vec<u8>,
}

#[derive(Serialize)]
struct Preimage<'a> {
    requester: &'a AgentId,
    provider: &'a AgentId,
    capability: &'a CapabilitySpec,
    terms: &'a Terms,
}

impl BindingCommitment {
    /// Unsigned draft.
    pub fn draft(requester: AgentId, provider: AgentId, capability: CapabilitySpec, terms: Terms) -> Self {
        BindingCommitment {
            requester,
            provider,
            capability,
            terms,
            requester_signature: Vec::new(),
            provider_signature: Vec::new(),
        }
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical_encode(&Preimage {
            requester: &self.requester,
            provider: &self.provider,
            capability: &self.capability,
            terms: &self.terms,
        })
        .expect("commitments hold finite terms")
    }

    pub fn sign_as_requester(&mut self, signer: &dyn Signer) {
        self.requester_signature = signer.sign_bytes(&self.signing_bytes());
    }

    pub fn sign_as_provider(&mut self, signer: &dyn Signer) {
        self.provider_signature = signer.sign_bytes(&self.signing_bytes());
    }

    pub fn requester_signature_valid(&self, requester_key: &PublicKey) -> bool {
        verify_with(requester_key, &self.signing_bytes(), &self.requester_signature)
    }

    pub fn provider_signature_valid(&self, provider_key: &PublicKey) -> bool {
        verify_with(provider_key, &self.signing_bytes(), &self.provider_signature)
    }

    pub fn fully_signed(&self, requester_key: &PublicKey, provider_key: &PublicKey) -> bool {
        self.requester_signature_valid(requester_key) && self.provider_signature_valid(provider_key)
    }

    pub fn canonical(&self) -> Vec<u8> {
        canonical_encode(self).expect("commitments hold finite terms")
    }
}

/// Requester-side acceptance of a countersigned commitment.
///
/// Anything other than the provider signature must equal the draft the
/// requester sent; both signatures must hold and the deadline must lie
/// ahead of `now_ms`.
pub fn confirm_bind(
    draft: &BindingCommitment,
    received: &BindingCommitment,
    requester_key: &PublicKey,
    provider_key: &PublicKey,
    now_ms: u64,
) -> Result<(), NegotiationError> {
    if received.terms != draft.terms
        || received.capability != draft.capability
        || received.requester != draft.requester
        || received.provider != draft.provider
    {
        return Err(NegotiationError::TermsMismatch);
    }
    if !received.fully_signed(requester_key, provider_key) {
        return Err(NegotiationError::SignatureInvalid);
    }
    if received.terms.deadline_ms <= now_ms {
        return Err(NegotiationError::DeadlineExceeded);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::fixture::{agent_id, capability};
    use crate::model::EncryptionLevel;

    fn setup() -> (KeyPair, KeyPair, BindingCommitment) {
        let r = KeyPair::from_seed(b"r");
        let p = KeyPair::from_seed(b"p");
        let mut c = BindingCommitment::draft(
            agent_id("LegalBot_Prime", "legal"),
            agent_id("TranslatorC_Gov", "translators"),
            capability(&["translation"], EncryptionLevel::Advanced, &[], true, &[]),
            Terms { price: 0.8, deadline_ms: 10_000, quality_min: 0.95, penalty: 0.08 },
        );
        c.sign_as_requester(&r);
        (r, p, c)
    }

    #[test]
    fn honest_countersignature_confirms() {
        let (r, p, draft) = setup();
        let mut bc = draft.clone();
        bc.sign_as_provider(&p);
        assert!(confirm_bind(&draft, &bc, &r.public(), &p.public(), 0).is_ok());
        assert_eq!(bc.signing_bytes(), draft.signing_bytes());
    }

    #[test]
    fn altered_price_is_terms_mismatch() {
        let (r, p, draft) = setup();
        let mut bc = draft.clone();
        bc.terms.price = 0.7;
        bc.sign_as_provider(&p);
        assert_eq!(confirm_bind(&draft, &bc, &r.public(), &p.public(), 0), Err(NegotiationError::TermsMismatch));
    }

    #[test]
    fn expired_deadline_rejected() {
        let (r, p, draft) = setup();
        let mut bc = draft.clone();
        bc.sign_as_provider(&p);
        assert_eq!(
            confirm_bind(&draft, &bc, &r.public(), &p.public(), 10_000),
            Err(NegotiationError::DeadlineExceeded)
        );
    }

    #[test]
    fn missing_provider_signature_rejected() {
        let (r, p, draft) = setup();
        assert_eq!(
            confirm_bind(&draft, &draft, &r.public(), &p.public(), 0),
            Err(NegotiationError::SignatureInvalid)
        );
    }
}
