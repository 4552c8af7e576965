//! Signed protocol envelopes and receiver-side replay protection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{sha3, verify_with, Hash32, PublicKey, Signer};
use crate::encoding::{canonical_decode, canonical_encode, EncodingError};
use crate::model::AgentId;

pub const DEFAULT_REPLAY_WINDOW_MS: u64 = 300_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MsgType {
    CdQuery,
    CdResponse,
    Ssr,
    Sso,
    SseInit,
    SseConfirm,
    SsaAccept,
    SsaReject,
    Bc,
    ExecRequest,
    ExecResult,
    Commit,
    Abort,
    Dcu,
}

impl MsgType {
    pub const ALL: [MsgType; 14] = [
        MsgType::CdQuery,
        MsgType::CdResponse,
        MsgType::Ssr,
        MsgType::Sso,
        MsgType::SseInit,
        MsgType::SseConfirm,
        MsgType::SsaAccept,
        MsgType::SsaReject,
        MsgType::Bc,
        MsgType::ExecRequest,
        MsgType::ExecResult,
        MsgType::Commit,
        MsgType::Abort,
        MsgType::Dcu,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MsgType::CdQuery => "CD_QUERY",
            MsgType::CdResponse => "CD_RESPONSE",
            MsgType::Ssr => "SSR",
            MsgType::Sso => "SSO",
            MsgType::SseInit => "SSE_INIT",
            MsgType::SseConfirm => "SSE_CONFIRM",
            MsgType::SsaAccept => "SSA_ACCEPT",
            MsgType::SsaReject => "SSA_REJECT",
            MsgType::Bc => "BC",
            MsgType::ExecRequest => "EXEC_REQUEST",
            MsgType::ExecResult => "EXEC_RESULT",
            MsgType::Commit => "COMMIT",
            MsgType::Abort => "ABORT",
            MsgType::Dcu => "DCU",
        }
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId(#[serde(with = "crate::encoding::hex_bytes")] pub [u8; 16]);

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionId({})", hex::encode(self.0))
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Nonce(#[serde(with = "crate::encoding::hex_bytes")] pub [u8; 16]);

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({})", hex::encode(self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedEnvelope {
    pub sender: AgentId,
    pub recipient: AgentId,
    pub session_id: SessionId,
    pub msg_type: MsgType,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub body: Vec<u8>,
    pub nonce: Nonce,
    pub timestamp_ms: u64,
    pub seq: u64,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Serialize)]
struct EnvelopePreimage<'a> {
    sender: &'a AgentId,
    recipient: &'a AgentId,
    session_id: &'a SessionId,
    msg_type: MsgType,
    #[serde(with = "crate::encoding::hex_bytes")]
    body: &'a [u8],
    nonce: &'a Nonce,
    timestamp_ms: u64,
    seq: u64,
}

/// Unsigned envelope fields.
#[derive(Debug, Clone)]
pub struct EnvelopeHeader {
    pub sender: AgentId,
    pub recipient: AgentId,
    pub session_id: SessionId,
    pub msg_type: MsgType,
    pub nonce: Nonce,
    pub timestamp_ms: u64,
    pub seq: u64,
}

impl SignedEnvelope {
    pub fn seal(header: EnvelopeHeader, body: Vec<u8>, signer: &dyn Signer) -> Self {
        let mut env = SignedEnvelope {
            sender: header.sender,
            recipient: header.recipient,
            session_id: header.session_id,
            msg_type: header.msg_type,
            body,
            nonce: header.nonce,
            timestamp_ms: header.timestamp_ms,
            seq: header.seq,
            signature: Vec::new(),
        };
        env.resign(signer);
        env
    }

    /// Encodes `body` canonically and seals it.
    pub fn seal_body<T: Serialize>(
        header: EnvelopeHeader,
        body: &T,
        signer: &dyn Signer,
    ) -> Result<Self, EncodingError> {
        Ok(Self::seal(header, canonical_encode(body)?, signer))
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical_encode(&EnvelopePreimage {
            sender: &self.sender,
            recipient: &self.recipient,
            session_id: &self.session_id,
            msg_type: self.msg_type,
            body: &self.body,
            nonce: &self.nonce,
            timestamp_ms: self.timestamp_ms,
            seq: self.seq,
        })
        .expect("envelope fields are always encodable")
    }

    pub fn resign(&mut self, signer: &dyn Signer) {
        self.signature = signer.sign_bytes(&self.signing_bytes());
    }

    pub fn verify(&self, sender_key: &PublicKey) -> bool {
        verify_with(sender_key, &self.signing_bytes(), &self.signature)
    }

    /// SHA3-256 of the full canonical envelope.
    pub fn hash(&self) -> Hash32 {
        sha3(&canonical_encode(self).expect("envelope fields are always encodable"))
    }

    pub fn decode_body<T: DeserializeOwned + Serialize>(&self) -> Result<T, EncodingError> {
        canonical_decode(&self.body)
    }

    /// Associated data binding an encrypted body to this envelope's header.
    pub fn channel_aad(&self) -> Vec<u8> {
        channel_aad(&self.sender, &self.recipient, &self.session_id, self.msg_type, self.seq)
    }
}

pub fn channel_aad(
    sender: &AgentId,
    recipient: &AgentId,
    session_id: &SessionId,
    msg_type: MsgType,
    seq: u64,
) -> Vec<u8> {
    canonical_encode(&(sender, recipient, session_id, msg_type, seq)).expect("header encodes")
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplayError {
    #[error("stale timestamp: {timestamp_ms} is {skew_ms} ms from now, window {window_ms} ms")]
    StaleTimestamp { timestamp_ms: u64, skew_ms: u64, window_ms: u64 },
    #[error("duplicate nonce")]
    DuplicateNonce,
    #[error("non-monotone sequence: got {got}, last accepted {last}")]
    NonMonotoneSequence { last: u64, got: u64 },
}

impl ReplayError {
    pub fn name(&self) -> &'static str {
        match self {
            ReplayError::StaleTimestamp { .. } => "StaleTimestamp",
            ReplayError::DuplicateNonce => "DuplicateNonce",
            ReplayError::NonMonotoneSequence { .. } => "NonMonotoneSequence",
        }
    }
}

/// Receiver-side duplicate detection over a sliding time window.
///
/// A nonce is remembered until `timestamp + window`; after that the
/// timestamp check alone rejects the envelope, so forgetting it is safe.
#[derive(Debug, Clone)]
pub struct ReplayWindow {
    window_ms: u64,
    seen: BTreeMap<(AgentId, Nonce), u64>,
    expiry_index: BTreeSet<(u64, AgentId, Nonce)>,
    last_seq: BTreeMap<(AgentId, SessionId), u64>,
}

impl Default for ReplayWindow {
    fn default() -> Self {
        Self::new(DEFAULT_REPLAY_WINDOW_MS)
    }
}

impl ReplayWindow {
    pub fn new(window_ms: u64) -> Self {
        ReplayWindow {
            window_ms,
            seen: BTreeMap::new(),
            expiry_index: BTreeSet::new(),
            last_seq: BTreeMap::new(),
        }
    }

    pub fn window_ms(&self) -> u64 {
        self.window_ms
    }

    pub fn remembered_nonces(&self) -> usize {
        self.seen.len()
    }

    pub fn last_seq(&self, sender: &AgentId, session: &SessionId) -> Option<u64> {
        self.last_seq.get(&(sender.clone(), *session)).copied()
    }

    fn evict(&mut self, now_ms: u64) {
        while let Some(first) = self.expiry_index.first() {
            if first.0 >= now_ms {
                break;
            }
            let (_, sender, nonce) = self.expiry_index.pop_first().expect("nonempty");
            self.seen.remove(&(sender, nonce));
        }
    }

    /// Accepts `env` only if its timestamp is fresh, its nonce unseen and
    /// its sequence number above the last one accepted for the same sender
    /// and session. Rejections leave the window untouched apart from
    /// eviction of expired nonces.
    pub fn check(&mut self, env: &SignedEnvelope, now_ms: u64) -> Result<(), ReplayError> {
        self.screen(env, now_ms)?;
        self.record(env);
        Ok(())
    }

    /// The checks of [`check`](Self::check) without remembering `env`.
    /// Lets a receiver bounce replays before paying for signature
    /// verification, then [`record`](Self::record) only authentic ones.
    pub fn screen(&mut self, env: &SignedEnvelope, now_ms: u64) -> Result<(), ReplayError> {
        self.evict(now_ms);
        let skew = now_ms.abs_diff(env.timestamp_ms);
        if skew > self.window_ms {
            return Err(ReplayError::StaleTimestamp {
                timestamp_ms: env.timestamp_ms,
                skew_ms: skew,
                window_ms: self.window_ms,
            });
        }
        if self.seen.contains_key(&(env.sender.clone(), env.nonce)) {
            return Err(ReplayError::DuplicateNonce);
        }
        let last = self.last_seq(&env.sender, &env.session_id).unwrap_or(0);
        if env.seq <= last {
            return Err(ReplayError::NonMonotoneSequence { last, got: env.seq });
        }
        Ok(())
    }

    /// Remembers a screened envelope's nonce and sequence number.
    pub fn record(&mut self, env: &SignedEnvelope) {
        let expiry = env.timestamp_ms.saturating_add(self.window_ms);
        self.seen.insert((env.sender.clone(), env.nonce), expiry);
        self.expiry_index.insert((expiry, env.sender.clone(), env.nonce));
        self.last_seq.insert((env.sender.clone(), env.session_id), env.seq);
    }

    /// Drops sequence state for a finished session. Nonces stay until they
    /// expire so old envelopes of the session still bounce.
    pub fn discard_session(&mut self, session: &SessionId) {
        self.last_seq.retain(|(_, s), _| s != session);
    }
}

/// Free-function form of [`ReplayWindow::check`].
pub fn check_replay(win: &mut ReplayWindow, env: &SignedEnvelope, now_ms: u64) -> Result<(), ReplayError> {
    win.check(env, now_ms)
}

/// Per-session outgoing sequence counter.
#[derive(Debug, Clone, Default)]
pub struct SequenceCounter(BTreeMap<SessionId, u64>);

impl SequenceCounter {
    pub fn next(&mut self, session: SessionId) -> u64 {
        let slot = self.0.entry(session).or_insert(0);
        *slot += 1;
        *slot
    }

    pub fn forget(&mut self, session: &SessionId) {
        self.0.remove(session);
    }
}
