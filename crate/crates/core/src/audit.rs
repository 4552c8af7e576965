//! Append-only, hash-chained audit log.
//!
//! Record `i` stores `hash_i = SHA3(hash_{i-1} ‖ canonical(index, time_ms,
//! actor, event, body))` with `hash_{-1}` = 32 zero bytes. On disk a log is a
//! sequence of records, each a 4-byte big-endian length followed by the
//! record's canonical encoding.

use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash_chain_step, Hash32};
use crate::encoding::{canonical_decode, canonical_encode, EncodingError};
use crate::model::AgentId;

pub const GENESIS_HASH: Hash32 = [0u8; 32];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub index: u64,
    pub time_ms: u64,
    pub actor: AgentId,
    pub event: String,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub body: Vec<u8>,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub prev_hash: Hash32,
    #[serde(with = "crate::encoding::hex_bytes")]
    pub hash: Hash32,
}

#[derive(Serialize)]
struct Chained<'a> {
    index: u64,
    time_ms: u64,
    actor: &'a AgentId,
    event: &'a str,
    #[serde(with = "crate::encoding::hex_bytes")]
    body: &'a [u8],
}

impl AuditRecord {
    pub fn compute_hash(&self) -> Hash32 {
        let payload = canonical_encode(&Chained {
            index: self.index,
            time_ms: self.time_ms,
            actor: &self.actor,
            event: &self.event,
            body: &self.body,
        })
        .expect("audit fields encode");
        hash_chain_step(&self.prev_hash, &payload)
    }
}

/// Outcome of [`verify_chain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainCheck {
    pub valid: bool,
    pub first_bad_index: Option<u64>,
}

pub fn verify_chain(records: &[AuditRecord]) -> ChainCheck {
    let mut prev = GENESIS_HASH;
    for (i, r) in records.iter().enumerate() {
        if r.index != i as u64 || r.prev_hash != prev || r.compute_hash() != r.hash {
            return ChainCheck { valid: false, first_bad_index: Some(i as u64) };
        }
        prev = r.hash;
    }
    ChainCheck { valid: true, first_bad_index: None }
}

#[derive(Debug, Error)]
pub enum AuditFileError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("record {index}: truncated")]
    Truncated { index: u64 },
    #[error("record {index}: {source}")]
    Decode { index: u64, source: EncodingError },
}

impl AuditFileError {
    pub fn record_index(&self) -> Option<u64> {
        match self {
            AuditFileError::Io(_) => None,
            AuditFileError::Truncated { index } | AuditFileError::Decode { index, .. } => Some(*index),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<AuditRecord>) -> Self {
        AuditLog { records }
    }

    pub fn head(&self) -> Hash32 {
        self.records.last().map_or(GENESIS_HASH, |r| r.hash)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    /// Test and tooling hook for tamper experiments.
    pub fn records_mut(&mut self) -> &mut [AuditRecord] {
        &mut self.records
    }

    pub fn append_raw(&mut self, time_ms: u64, actor: &AgentId, event: &str, body: Vec<u8>) -> &AuditRecord {
        let mut rec = AuditRecord {
            index: self.records.len() as u64,
            time_ms,
            actor: actor.clone(),
            event: event.to_owned(),
            body,
            prev_hash: self.head(),
            hash: GENESIS_HASH,
        };
        rec.hash = rec.compute_hash();
        self.records.push(rec);
        self.records.last().expect("just pushed")
    }

    pub fn append<T: Serialize>(
        &mut self,
        time_ms: u64,
        actor: &AgentId,
        event: &str,
        body: &T,
    ) -> Result<&AuditRecord, EncodingError> {
        let bytes = canonical_encode(body)?;
        Ok(self.append_raw(time_ms, actor, event, bytes))
    }

    pub fn verify(&self) -> ChainCheck {
        verify_chain(&self.records)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            let bytes = canonical_encode(r).expect("audit records encode");
            out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(&bytes);
        }
        out
    }

    pub fn from_bytes(mut data: &[u8]) -> Result<Self, AuditFileError> {
        let mut records = Vec::new();
        while !data.is_empty() {
            let index = records.len() as u64;
            if data.len() < 4 {
                return Err(AuditFileError::Truncated { index });
            }
            let len = u32::from_be_bytes(data[..4].try_into().expect("4 bytes")) as usize;
            data = &data[4..];
            if data.len() < len {
                return Err(AuditFileError::Truncated { index });
            }
            let rec: AuditRecord =
                canonical_decode(&data[..len]).map_err(|source| AuditFileError::Decode { index, source })?;
            records.push(rec);
            data = &data[len..];
        }
        Ok(AuditLog { records })
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, AuditFileError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, AuditFileError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
