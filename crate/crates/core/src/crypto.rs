//! Keys, signatures, hashing, session keys, proof-of-work and the channel
//! cipher.
//!
//! Signatures are Ed25519 (256-bit curve keys, deterministic signing). Every
//! digest is SHA3-256; session keys come from HMAC-SHA3-256.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Nonce as AeadNonce};
use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha3::{Digest, Sha3_256};
use thiserror::Error;

pub const KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const HASH_LEN: usize = 32;
pub const ED25519: &str = "ed25519";

pub type Hash32 = [u8; HASH_LEN];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed key: expected {expected} bytes, got {got}")]
    MalformedKey { expected: usize, got: usize },
    #[error("unsupported signature scheme {0:?}")]
    UnsupportedScheme(String),
    #[error("channel decryption failed")]
    Decryption,
}

/// A 32-byte Ed25519 public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PublicKey(#[serde(with = "crate::encoding::hex_bytes")] pub [u8; KEY_LEN]);

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({})", &hex::encode(self.0)[..16])
    }
}

impl PublicKey {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::MalformedKey { expected: KEY_LEN, got: bytes.len() })?;
        Ok(PublicKey(arr))
    }
}

/// Signing key pair. The secret half never leaves this struct except through
/// [`KeyPair::secret`], which exists for the free-function signing interface.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    scheme_id: &'static str,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public())
            .field("scheme_id", &self.scheme_id)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    /// Derives a key pair from an arbitrary seed. The same seed always gives
    /// the same keys.
    pub fn from_seed(seed: &[u8]) -> Self {
        let mut h = Sha3_256::new();
        h.update(b"acnbp/keypair/v1");
        h.update(seed);
        let secret: [u8; KEY_LEN] = h.finalize().into();
        Self::from_secret(&secret).expect("32-byte secret")
    }

    pub fn from_secret(secret: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; KEY_LEN] = secret
            .try_into()
            .map_err(|_| CryptoError::MalformedKey { expected: KEY_LEN, got: secret.len() })?;
        Ok(KeyPair { signing: SigningKey::from_bytes(&arr), scheme_id: ED25519 })
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn secret(&self) -> [u8; KEY_LEN] {
        self.signing.to_bytes()
    }

    pub fn scheme_id(&self) -> &str {
        self.scheme_id
    }

    pub fn sign(&self, payload: &[u8]) -> Vec<u8> {
        self.signing.sign(payload).to_bytes().to_vec()
    }
}

/// Something that can produce signatures for a fixed public key.
pub trait Signer {
    fn public_key(&self) -> PublicKey;
    fn sign_bytes(&self, payload: &[u8]) -> Vec<u8>;
}

impl Signer for KeyPair {
    fn public_key(&self) -> PublicKey {
        self.public()
    }
    fn sign_bytes(&self, payload: &[u8]) -> Vec<u8> {
        self.sign(payload)
    }
}

pub fn sign(secret_key: &[u8], payload: &[u8]) -> Result<Vec<u8>, CryptoError> {
    Ok(KeyPair::from_secret(secret_key)?.sign(payload))
}

/// Returns `Ok(false)` for any signature that does not verify, including ones
/// of the wrong length. Only a malformed public key is an error.
pub fn verify(public_key: &[u8], payload: &[u8], signature: &[u8]) -> Result<bool, CryptoError> {
    let pk: [u8; KEY_LEN] = public_key
        .try_into()
        .map_err(|_| CryptoError::MalformedKey { expected: KEY_LEN, got: public_key.len() })?;
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return Ok(false);
    };
    let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
        return Ok(false);
    };
    Ok(vk.verify(payload, &sig).is_ok())
}

/// Verification against a typed key; never errors.
pub fn verify_with(key: &PublicKey, payload: &[u8], signature: &[u8]) -> bool {
    verify(&key.0, payload, signature).unwrap_or(false)
}

pub fn sha3(data: &[u8]) -> Hash32 {
    Sha3_256::digest(data).into()
}

/// `SHA3-256(prev_hash ‖ body)`.
pub fn hash_chain_step(prev_hash: &Hash32, body: &[u8]) -> Hash32 {
    let mut h = Sha3_256::new();
    h.update(prev_hash);
    h.update(body);
    h.finalize().into()
}

type HmacSha3 = Hmac<Sha3_256>;

/// `HMAC-SHA3-256(shared_secret, nonce_r ‖ nonce_p)`.
pub fn derive_session_key(shared_secret: &[u8], nonce_r: &[u8], nonce_p: &[u8]) -> [u8; KEY_LEN] {
    let mut mac = <HmacSha3 as Mac>::new_from_slice(shared_secret).expect("HMAC accepts any key length");
    mac.update(nonce_r);
    mac.update(nonce_p);
    mac.finalize().into_bytes().into()
}

pub fn hmac_sha3(key: &[u8], data: &[u8]) -> Hash32 {
    let mut mac = <HmacSha3 as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(data);
    mac.finalize().into_bytes().into()
}

pub const MAX_POW_DIFFICULTY: u32 = 24;

pub fn leading_zero_bits(digest: &[u8]) -> u32 {
    let mut bits = 0;
    for byte in digest {
        if *byte == 0 {
            bits += 8;
        } else {
            bits += byte.leading_zeros();
            break;
        }
    }
    bits
}

pub fn verify_pow(challenge: &[u8], nonce: &[u8], difficulty_bits: u32) -> bool {
    let mut h = Sha3_256::new();
    h.update(challenge);
    h.update(nonce);
    leading_zero_bits(&h.finalize()) >= difficulty_bits
}

/// Searches 8-byte big-endian counters from zero for a nonce meeting
/// `difficulty_bits`. Difficulty is clamped to [`MAX_POW_DIFFICULTY`].
pub fn proof_of_work(challenge: &[u8], difficulty_bits: u32) -> Vec<u8> {
    let difficulty = difficulty_bits.min(MAX_POW_DIFFICULTY);
    let mut prefix = Sha3_256::new();
    prefix.update(challenge);
    for counter in 0u64.. {
        let nonce = counter.to_be_bytes();
        let mut h = prefix.clone();
        h.update(nonce);
        if leading_zero_bits(&h.finalize()) >= difficulty {
            return nonce.to_vec();
        }
    }
    unreachable!("2^64 counters exhausted")
}

/// Ephemeral X25519 secret used for per-session key agreement.
pub struct EphemeralSecret(x25519_dalek::StaticSecret);

impl EphemeralSecret {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        EphemeralSecret(x25519_dalek::StaticSecret::from(bytes))
    }

    pub fn public(&self) -> [u8; 32] {
        x25519_dalek::PublicKey::from(&self.0).to_bytes()
    }

    pub fn agree(&self, peer_public: &[u8; 32]) -> [u8; 32] {
        self.0.diffie_hellman(&x25519_dalek::PublicKey::from(*peer_public)).to_bytes()
    }
}

/// Encrypts `plaintext` under the session key. The AEAD nonce is the first
/// twelve bytes of the (unique) envelope nonce.
pub fn seal(key: &[u8; KEY_LEN], nonce16: &[u8; 16], aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(key.into());
    cipher
        .encrypt(AeadNonce::from_slice(&nonce16[..12]), Payload { msg: plaintext, aad })
        .expect("ChaCha20Poly1305 encryption is infallible for in-memory buffers")
}

pub fn open(
    key: &[u8; KEY_LEN],
    nonce16: &[u8; 16],
    aad: &[u8],
    ciphertext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let cipher = ChaCha20Poly1305::new(key.into());
    cipher
        .decrypt(AeadNonce::from_slice(&nonce16[..12]), Payload { msg: ciphertext, aad })
        .map_err(|_| CryptoError::Decryption)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sign_verify_round_trip_on_empty_payload() {
        let kp = KeyPair::from_seed(b"alice");
        let sig = kp.sign(b"");
        assert!(verify(&kp.public().0, b"", &sig).unwrap());
    }

    #[test]
    fn signing_is_deterministic() {
        let kp = KeyPair::from_seed(b"alice");
        assert_eq!(kp.sign(b"m"), kp.sign(b"m"));
        assert_eq!(sign(&kp.secret(), b"m").unwrap(), kp.sign(b"m"));
    }

    #[test]
    fn wrong_public_key_fails() {
        let a = KeyPair::from_seed(b"alice");
        let b = KeyPair::from_seed(b"bob");
        let sig = a.sign(b"hello");
        assert!(!verify(&b.public().0, b"hello", &sig).unwrap());
    }

    #[test]
    fn every_single_byte_flip_fails() {
        let kp = KeyPair::from_seed(b"alice");
        let msg = b"SSR:LegalBot_Prime".to_vec();
        let sig = kp.sign(&msg);
        for i in 0..msg.len() {
            for bit in 0..8 {
                let mut m = msg.clone();
                m[i] ^= 1 << bit;
                assert!(!verify(&kp.public().0, &m, &sig).unwrap(), "payload byte {i} bit {bit}");
            }
        }
        for i in 0..sig.len() {
            let mut s = sig.clone();
            s[i] ^= 0x01;
            assert!(!verify(&kp.public().0, &msg, &s).unwrap(), "signature byte {i}");
        }
    }

    #[test]
    fn malformed_keys_are_errors() {
        assert_eq!(
            verify(&[0u8; 31], b"", &[0u8; 64]),
            Err(CryptoError::MalformedKey { expected: 32, got: 31 })
        );
        assert!(matches!(sign(&[1u8; 33], b""), Err(CryptoError::MalformedKey { .. })));
        // short signatures are just invalid
        let kp = KeyPair::from_seed(b"x");
        assert!(!verify(&kp.public().0, b"", &[0u8; 10]).unwrap());
    }

    #[test]
    fn hash_chain_step_of_zero_block_and_empty_body() {
        // SHA3-256 of 32 zero bytes, reference value
        let expected = "9e6291970cb44dd94008c79bcaf9d86f18b4b49ba5b2a04781db7199ed3b9e4e";
        assert_eq!(hex::encode(hash_chain_step(&[0u8; 32], b"")), expected);
        assert_eq!(hash_chain_step(&[0u8; 32], b""), hash_chain_step(&[0u8; 32], b""));
    }

    #[test]
    fn hash_chain_step_separates_random_bodies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let prev = [3u8; 32];
        for _ in 0..1000 {
            let a: [u8; 24] = rng.gen();
            let mut b = a;
            b[rng.gen_range(0..24)] ^= rng.gen_range(1..=255u8);
            assert_ne!(hash_chain_step(&prev, &a), hash_chain_step(&prev, &b));
        }
    }

    #[test]
    fn session_key_depends_on_all_inputs_in_order() {
        let k = derive_session_key(b"shared", b"nr", b"np");
        assert_eq!(k, derive_session_key(b"shared", b"nr", b"np"));
        assert_ne!(k, derive_session_key(b"shared", b"np", b"nr"));
        assert_ne!(k, derive_session_key(b"shared!", b"nr", b"np"));
    }

    #[test]
    fn pow_zero_difficulty_accepts_anything() {
        assert!(verify_pow(b"c", b"", 0));
        assert!(verify_pow(b"c", b"whatever", 0));
    }

    #[test]
    fn pow_search_result_verifies() {
        let nonce = proof_of_work(b"challenge", 12);
        assert!(verify_pow(b"challenge", &nonce, 12));
    }

    #[test]
    fn random_nonces_fail_at_twenty_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let hits = (0..100).filter(|_| verify_pow(b"challenge", &rng.gen::<[u8; 8]>(), 20)).count();
        assert_eq!(hits, 0);
    }

    #[test]
    fn leading_zero_bit_count() {
        assert_eq!(leading_zero_bits(&[0, 0, 0x10, 0xff]), 19);
        assert_eq!(leading_zero_bits(&[0x80]), 0);
        assert_eq!(leading_zero_bits(&[0, 0]), 16);
    }

    #[test]
    fn x25519_agreement_is_symmetric() {
        let a = EphemeralSecret::from_bytes([1; 32]);
        let b = EphemeralSecret::from_bytes([2; 32]);
        assert_eq!(a.agree(&b.public()), b.agree(&a.public()));
    }

    #[test]
    fn seal_open_round_trip_and_tamper() {
        let key = [9u8; 32];
        let nonce = [4u8; 16];
        let ct = seal(&key, &nonce, b"aad", b"secret text");
        assert_eq!(open(&key, &nonce, b"aad", &ct).unwrap(), b"secret text");
        let mut bad = ct.clone();
        bad[0] ^= 1;
        assert_eq!(open(&key, &nonce, b"aad", &bad), Err(CryptoError::Decryption));
        assert!(open(&key, &nonce, b"other", &ct).is_err());
        assert!(open(&[8u8; 32], &nonce, b"aad", &ct).is_err());
    }
}
