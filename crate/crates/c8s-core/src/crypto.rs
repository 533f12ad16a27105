//! The cryptographic suite behind the whole simulator: digests,
//! domain-separated signatures, public-key key wrapping, and authenticated
//! symmetric encryption.
//!
//! One concrete suite is fixed (SHA-256, Ed25519, X25519 + HKDF-SHA256 +
//! ChaCha20-Poly1305) behind small newtypes so no other module ever names an
//! algorithm. Signing is deterministic, which is what makes replica issuance
//! idempotent byte-for-byte.
//!
//! Nothing here reads ambient entropy. Every randomized operation takes the
//! caller's RNG, so a run is reproducible from a seed.
//!
//! Every primitive call bumps a global counter (see [`op_count`]). Code paths
//! that must be crypto-free (hint parsing, ciphertext routing) are asserted
//! against it in tests and in router instrumentation.

use std::sync::atomic::{AtomicU64, Ordering};

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;
use ed25519_dalek::{Signer, Verifier};
use hkdf::Hkdf;
use rand_core::RngCore;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::wire::{Decoder, Encoder, WireError};

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 64;
pub const SIGNATURE_LEN: usize = 64;
pub const SYMMETRIC_KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
/// Encapsulation half of a wrapped key: one X25519 point.
pub const ENCAP_LEN: usize = 32;
/// Compact stanza wrap: 32-byte encapsulation + sealed 16-byte seed (16 ct + 16 tag).
pub const SEED_WRAP_LEN: usize = 64;
pub const SEED_LEN: usize = 16;

static OP_COUNT: AtomicU64 = AtomicU64::new(0);

fn bump() {
    OP_COUNT.fetch_add(1, Ordering::Relaxed);
}

/// Number of primitive cryptographic operations performed by this process so
/// far. Only useful as a before/after delta.
pub fn op_count() -> u64 {
    OP_COUNT.load(Ordering::Relaxed)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("ciphertext failed authentication")]
    AuthFailure,
    #[error("wrapped key is not addressed to this private key")]
    WrongRecipient,
    #[error("structurally corrupt cryptographic material")]
    Corrupt,
}

// ---------------------------------------------------------------------------
// Digest

/// 32-byte content digest. Houses every measurement and image-digest value.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let raw = hex::decode(s).ok()?;
        Some(Digest(raw.try_into().ok()?))
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..12])
    }
}

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn digest(data: &[u8]) -> Digest {
    bump();
    Digest(Sha256::digest(data).into())
}

// ---------------------------------------------------------------------------
// Keys and signatures

/// Public half of a [`KeyPair`]: an Ed25519 verifying key plus an X25519
/// recipient key, 64 bytes on the wire. One public identity serves both as a
/// signature verifier and as a wrap recipient, which is how certificates,
/// brokering, and envelope stanzas all address the same pod key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey {
    sig: [u8; 32],
    kem: [u8; 32],
}

impl PublicKey {
    pub fn to_bytes(&self) -> [u8; PUBLIC_KEY_LEN] {
        let mut out = [0u8; PUBLIC_KEY_LEN];
        out[..32].copy_from_slice(&self.sig);
        out[32..].copy_from_slice(&self.kem);
        out
    }

    pub fn from_bytes(raw: &[u8; PUBLIC_KEY_LEN]) -> Self {
        PublicKey {
            sig: raw[..32].try_into().unwrap(),
            kem: raw[32..].try_into().unwrap(),
        }
    }

    /// Digest of the serialized key; this is the value attestation reports
    /// bind ("bound_key_digest").
    pub fn digest(&self) -> Digest {
        digest(&self.to_bytes())
    }
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({}..)", hex::encode(&self.sig[..6]))
    }
}

/// A key pair derived from a 32-byte seed. Wrapping a private key (replica
/// enrollment) wraps the seed.
#[derive(Clone)]
pub struct KeyPair {
    seed: [u8; 32],
    signing: ed25519_dalek::SigningKey,
    kem: x25519_dalek::StaticSecret,
    public: PublicKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let sig_seed: [u8; 32] = Sha256::digest([b"c8s/keypair/sig".as_slice(), &seed].concat()).into();
        let kem_seed: [u8; 32] = Sha256::digest([b"c8s/keypair/kem".as_slice(), &seed].concat()).into();
        let signing = ed25519_dalek::SigningKey::from_bytes(&sig_seed);
        let kem = x25519_dalek::StaticSecret::from(kem_seed);
        let public = PublicKey {
            sig: signing.verifying_key().to_bytes(),
            kem: x25519_dalek::PublicKey::from(&kem).to_bytes(),
        };
        KeyPair { seed, signing, kem, public }
    }

    pub fn generate(rng: &mut dyn RngCore) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    /// The seed is the portable private-key material.
    pub fn seed(&self) -> [u8; 32] {
        self.seed
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Never print private material.
        write!(f, "KeyPair(pub {:?})", self.public)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub fn to_bytes(&self) -> [u8; SIGNATURE_LEN] {
        self.0
    }
}

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..6]))
    }
}

/// Signed bytes are `domain ‖ 0x00 ‖ msg`; a signature made under one domain
/// never verifies under another.
fn domain_separated(domain: &str, msg: &[u8]) -> Vec<u8> {
    assert!(!domain.is_empty(), "signature domain must be non-empty");
    let mut buf = Vec::with_capacity(domain.len() + 1 + msg.len());
    buf.extend_from_slice(domain.as_bytes());
    buf.push(0);
    buf.extend_from_slice(msg);
    buf
}

pub fn sign(key: &KeyPair, domain: &str, msg: &[u8]) -> Signature {
    bump();
    let sig = key.signing.sign(&domain_separated(domain, msg));
    Signature(sig.to_bytes())
}

pub fn verify(key: &PublicKey, domain: &str, msg: &[u8], sig: &Signature) -> bool {
    bump();
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&key.sig) else {
        return false;
    };
    vk.verify(&domain_separated(domain, msg), &ed25519_dalek::Signature::from_bytes(&sig.0))
        .is_ok()
}

// ---------------------------------------------------------------------------
// Symmetric encryption

#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey(pub [u8; SYMMETRIC_KEY_LEN]);

impl SymmetricKey {
    pub fn generate(rng: &mut dyn RngCore) -> Self {
        let mut k = [0u8; SYMMETRIC_KEY_LEN];
        rng.fill_bytes(&mut k);
        SymmetricKey(k)
    }
}

impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

/// Nonce followed by ciphertext-with-tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AeadCiphertext {
    pub nonce: [u8; NONCE_LEN],
    pub body: Vec<u8>,
}

impl AeadCiphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_LEN + self.body.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, CryptoError> {
        if raw.len() < NONCE_LEN + 16 {
            return Err(CryptoError::Corrupt);
        }
        Ok(AeadCiphertext {
            nonce: raw[..NONCE_LEN].try_into().unwrap(),
            body: raw[NONCE_LEN..].to_vec(),
        })
    }
}

pub fn aead_seal(key: &SymmetricKey, plaintext: &[u8], aad: &[u8], rng: &mut dyn RngCore) -> AeadCiphertext {
    bump();
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let cipher = ChaCha20Poly1305::new((&key.0).into());
    let body = cipher
        .encrypt((&nonce).into(), Payload { msg: plaintext, aad })
        .expect("chacha20poly1305 encryption is infallible");
    AeadCiphertext { nonce, body }
}

pub fn aead_open(key: &SymmetricKey, ct: &AeadCiphertext, aad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    bump();
    let cipher = ChaCha20Poly1305::new((&key.0).into());
    cipher
        .decrypt((&ct.nonce).into(), Payload { msg: &ct.body, aad })
        .map_err(|_| CryptoError::AuthFailure)
}

// ---------------------------------------------------------------------------
// Key wrapping

/// Hybrid-encrypted symmetric key: ephemeral encapsulation plus an
/// authenticated ciphertext. Unwrappable only with the recipient's private
/// key and the same context string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrappedKey {
    pub encapsulation: Vec<u8>,
    pub ciphertext: Vec<u8>,
}

impl WrappedKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        Encoder::new().bytes(&self.encapsulation).bytes(&self.ciphertext).finish()
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(raw);
        let encapsulation = d.bytes()?;
        let ciphertext = d.bytes()?;
        d.finish()?;
        Ok(WrappedKey { encapsulation, ciphertext })
    }
}

fn derive_wrap_key(shared: &[u8; 32], encap: &[u8; 32], recipient_kem: &[u8; 32], info: &[u8]) -> SymmetricKey {
    let mut salt = Vec::with_capacity(64);
    salt.extend_from_slice(encap);
    salt.extend_from_slice(recipient_kem);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut okm = [0u8; SYMMETRIC_KEY_LEN];
    let mut full_info = b"c8s/wrap/v1".to_vec();
    full_info.extend_from_slice(info);
    hk.expand(&full_info, &mut okm).expect("okm length fits hkdf output");
    SymmetricKey(okm)
}

pub fn wrap_key(recipient: &PublicKey, key: &SymmetricKey, info: &[u8], rng: &mut dyn RngCore) -> WrappedKey {
    bump();
    let mut eph_seed = [0u8; 32];
    rng.fill_bytes(&mut eph_seed);
    let eph = x25519_dalek::StaticSecret::from(eph_seed);
    let encap = x25519_dalek::PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&x25519_dalek::PublicKey::from(recipient.kem)).to_bytes();
    let wrap = derive_wrap_key(&shared, &encap, &recipient.kem, info);
    let sealed = aead_seal(&wrap, &key.0, info, rng);
    WrappedKey { encapsulation: encap.to_vec(), ciphertext: sealed.to_bytes() }
}

pub fn unwrap_key(recipient: &KeyPair, wrapped: &WrappedKey, info: &[u8]) -> Result<SymmetricKey, CryptoError> {
    bump();
    let encap: [u8; 32] = wrapped.encapsulation.as_slice().try_into().map_err(|_| CryptoError::Corrupt)?;
    let sealed = AeadCiphertext::from_bytes(&wrapped.ciphertext)?;
    let shared = recipient.kem.diffie_hellman(&x25519_dalek::PublicKey::from(encap)).to_bytes();
    let wrap = derive_wrap_key(&shared, &encap, &recipient.public.kem, info);
    let raw = aead_open(&wrap, &sealed, info).map_err(|_| CryptoError::WrongRecipient)?;
    let key: [u8; SYMMETRIC_KEY_LEN] = raw.as_slice().try_into().map_err(|_| CryptoError::Corrupt)?;
    Ok(SymmetricKey(key))
}

// ---------------------------------------------------------------------------
// Compact seed wrap (envelope stanzas)

/// Wrap a 16-byte seed into exactly 64 bytes: 32-byte X25519 encapsulation
/// followed by a ChaCha20-Poly1305 sealing of the seed (16-byte ciphertext +
/// 16-byte tag, zero nonce — the derived key is single-use). The per-stanza
/// tag is the stanza's integrity check.
pub fn wrap_seed(recipient: &PublicKey, seed: &[u8; SEED_LEN], info: &[u8], rng: &mut dyn RngCore) -> [u8; SEED_WRAP_LEN] {
    bump();
    let mut eph_seed = [0u8; 32];
    rng.fill_bytes(&mut eph_seed);
    let eph = x25519_dalek::StaticSecret::from(eph_seed);
    let encap = x25519_dalek::PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&x25519_dalek::PublicKey::from(recipient.kem)).to_bytes();
    let wrap = derive_wrap_key(&shared, &encap, &recipient.kem, info);
    let cipher = ChaCha20Poly1305::new((&wrap.0).into());
    let sealed = cipher
        .encrypt((&[0u8; NONCE_LEN]).into(), Payload { msg: seed.as_slice(), aad: info })
        .expect("chacha20poly1305 encryption is infallible");
    let mut out = [0u8; SEED_WRAP_LEN];
    out[..32].copy_from_slice(&encap);
    out[32..].copy_from_slice(&sealed);
    out
}

pub fn unwrap_seed(recipient: &KeyPair, material: &[u8; SEED_WRAP_LEN], info: &[u8]) -> Result<[u8; SEED_LEN], CryptoError> {
    bump();
    let encap: [u8; 32] = material[..32].try_into().unwrap();
    let shared = recipient.kem.diffie_hellman(&x25519_dalek::PublicKey::from(encap)).to_bytes();
    let wrap = derive_wrap_key(&shared, &encap, &recipient.public.kem, info);
    let cipher = ChaCha20Poly1305::new((&wrap.0).into());
    let raw = cipher
        .decrypt((&[0u8; NONCE_LEN]).into(), Payload { msg: &material[32..], aad: info })
        .map_err(|_| CryptoError::WrongRecipient)?;
    Ok(raw.as_slice().try_into().expect("sealed seed is 16 bytes"))
}

/// Expand a stanza seed into a full symmetric key.
pub fn expand_seed(seed: &[u8; SEED_LEN], label: &[u8]) -> SymmetricKey {
    bump();
    let hk = Hkdf::<Sha256>::new(None, seed);
    let mut okm = [0u8; SYMMETRIC_KEY_LEN];
    hk.expand(label, &mut okm).expect("okm length fits hkdf output");
    SymmetricKey(okm)
}
