use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::messages::Sealed;
use super::NegotiationError;
use crate::crypto::{open, seal, sha3, KeyPair, PublicKey, Signer};
use crate::encoding::{canonical_decode, canonical_encode};
use crate::envelope::{
    channel_aad, EnvelopeHeader, MsgType, Nonce, ReplayWindow, SequenceCounter, SessionId, SignedEnvelope,
};
use crate::model::AgentId;

/// Deterministic per-agent RNG seed derived from the run seed.
pub fn agent_rng_seed(run_seed: u64, id: &AgentId) -> [u8; 32] {
    let mut buf = b"acnbp/agent-rng/v1".to_vec();
    buf.extend_from_slice(&run_seed.to_be_bytes());
    buf.extend_from_slice(id.to_string().as_bytes());
    sha3(&buf)
}

/// An agent's signing identity, randomness, outgoing sequence numbers and
/// inbound replay window.
pub struct Endpoint {
    pub id: AgentId,
    key: KeyPair,
    rng: ChaCha20Rng,
    seq: SequenceCounter,
    pub replay: ReplayWindow,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint").field("id", &self.id).finish_non_exhaustive()
    }
}

impl Endpoint {
    pub fn new(id: AgentId, key: KeyPair, rng_seed: [u8; 32]) -> Self {
        Endpoint {
            id,
            key,
            rng: ChaCha20Rng::from_seed(rng_seed),
            seq: SequenceCounter::default(),
            replay: ReplayWindow::default(),
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public()
    }

    pub fn signer(&self) -> &dyn Signer {
        &self.key
    }

    pub fn random<const N: usize>(&mut self) -> [u8; N] {
        let mut b = [0u8; N];
        self.rng.fill_bytes(&mut b);
        b
    }

    fn header(&mut self, to: &AgentId, session: SessionId, msg_type: MsgType, now: u64) -> EnvelopeHeader {
        EnvelopeHeader {
            sender: self.id.clone(),
            recipient: to.clone(),
            session_id: session,
            msg_type,
            nonce: Nonce(self.random()),
            timestamp_ms: now,
            seq: self.seq.next(session),
        }
    }

    pub fn envelope<T: Serialize>(
        &mut self,
        to: &AgentId,
        session: SessionId,
        msg_type: MsgType,
        body: &T,
        now: u64,
    ) -> SignedEnvelope {
        let header = self.header(to, session, msg_type, now);
        SignedEnvelope::seal_body(header, body, &self.key).expect("protocol bodies encode")
    }

    /// Envelope whose body is `body` sealed under `key`, bound to the header.
    pub fn encrypted<T: Serialize>(
        &mut self,
        to: &AgentId,
        session: SessionId,
        msg_type: MsgType,
        key: &[u8; 32],
        body: &T,
        now: u64,
    ) -> SignedEnvelope {
        let header = self.header(to, session, msg_type, now);
        let aad = channel_aad(&header.sender, &header.recipient, &header.session_id, msg_type, header.seq);
        let pt = canonical_encode(body).expect("protocol bodies encode");
        let sealed = Sealed { ciphertext: seal(key, &header.nonce.0, &aad, &pt) };
        SignedEnvelope::seal_body(header, &sealed, &self.key).expect("sealed bodies encode")
    }

    /// Recipient, replay and signature checks, in that order. Replays bounce
    /// without a curve operation; the window only remembers envelopes whose
    /// signature holds, so forgeries cannot burn a peer's nonces.
    pub fn admit(&mut self, env: &SignedEnvelope, sender_key: &PublicKey, now: u64) -> Result<(), NegotiationError> {
        if env.recipient != self.id {
            return Err(NegotiationError::WrongRecipient);
        }
        self.replay.screen(env, now).map_err(NegotiationError::ReplayRejected)?;
        if !env.verify(sender_key) {
            return Err(NegotiationError::SignatureInvalid);
        }
        self.replay.record(env);
        Ok(())
    }

    pub fn forget_session(&mut self, session: &SessionId) {
        self.replay.discard_session(session);
        self.seq.forget(session);
    }
}

pub fn decode<T: DeserializeOwned + Serialize>(env: &SignedEnvelope) -> Result<T, NegotiationError> {
    env.decode_body().map_err(|e| NegotiationError::Malformed(e.to_string()))
}

/// Opens a sealed body; any failure to authenticate is a key-confirmation
/// failure.
pub fn open_sealed<T: DeserializeOwned + Serialize>(env: &SignedEnvelope, key: &[u8; 32]) -> Result<T, NegotiationError> {
    let sealed: Sealed = decode(env)?;
    let pt = open(key, &env.nonce.0, &env.channel_aad(), &sealed.ciphertext)
        .map_err(|_| NegotiationError::KeyConfirmationFailed)?;
    canonical_decode(&pt).map_err(|e| NegotiationError::Malformed(e.to_string()))
}
