//! Multi-recipient hybrid-encryption envelope: the body is encrypted once
//! under a fresh key, and that key is independently recoverable by every
//! recipient through a fixed-size stanza. Stanzas also carry a plaintext
//! routing hint readable without any key, which is what the encrypted ingress
//! router forwards on.
//!
//! Wire format (bit-exact, all integers big-endian):
//!
//! ```text
//! +-------+---------+-----------+=====================+--------------+---------+----------+======+
//! | magic | version | recipient |      stanzas        | sender_pub   | sender  | body_len | body |
//! | C8SE  |  u8 =1  | count u16 | (per recipient)     | len u16 (64) | pub 64B |   u64    |      |
//! +-------+---------+-----------+=====================+--------------+---------+----------+======+
//!
//! stanza := material (64 bytes) ‖ hint_len u16 ‖ hint (UTF-8)
//! material := X25519 encapsulation (32) ‖ sealed body-key seed (16 ct + 16 tag)
//! body := nonce (12) ‖ ciphertext ‖ tag (16)
//! ```
//!
//! The 64 bytes of cryptographic material per recipient are exact, so header
//! growth is affine in recipient count with slope 64 + 2 + hint bytes. The
//! body bytes are independent of the recipient list: its AAD covers only the
//! magic, version, and sender key. Integrity of each stanza is carried by its
//! own seal; a recipient whose stanza was tampered with cannot recover the
//! seed, and no tampered input ever yields attacker-controlled plaintext.

use rand_core::RngCore;
use thiserror::Error;

use crate::crypto::{
    aead_open, aead_seal, expand_seed, unwrap_seed, wrap_seed, AeadCiphertext, KeyPair, PublicKey,
    SEED_LEN, SEED_WRAP_LEN,
};

pub const MAGIC: &[u8; 4] = b"C8SE";
pub const VERSION: u8 = 1;

const STANZA_INFO: &[u8] = b"c8s/mre/v1";
const BODY_KEY_LABEL: &[u8] = b"c8s/mre/body";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("envelope needs at least one recipient")]
    NoRecipients,
    #[error("too many recipients for a u16 count")]
    TooManyRecipients,
    #[error("hint exceeds u16 length")]
    HintTooLong,
    #[error("private key matches no stanza")]
    NotARecipient,
    #[error("envelope corrupt: body failed authentication")]
    Corrupt,
    #[error("malformed envelope at byte {offset}: {what}")]
    Malformed { offset: usize, what: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecipientStanza {
    pub material: [u8; SEED_WRAP_LEN],
    pub hint: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiRecipientEnvelope {
    pub stanzas: Vec<RecipientStanza>,
    pub sender_pubkey: PublicKey,
    pub body: AeadCiphertext,
}

fn stanza_info(hint: &str) -> Vec<u8> {
    let mut info = STANZA_INFO.to_vec();
    info.extend_from_slice(hint.as_bytes());
    info
}

fn body_aad(sender: &PublicKey) -> Vec<u8> {
    let mut aad = MAGIC.to_vec();
    aad.push(VERSION);
    aad.extend_from_slice(&sender.to_bytes());
    aad
}

/// Encrypt once, wrap the body key to every recipient in the given order.
/// The body bytes depend only on the payload, the sender key, and the first
/// randomness drawn — not on the recipient list.
pub fn encrypt_multi(
    payload: &[u8],
    recipients: &[(PublicKey, String)],
    sender_pub: PublicKey,
    rng: &mut dyn RngCore,
) -> Result<MultiRecipientEnvelope, EnvelopeError> {
    if recipients.is_empty() {
        return Err(EnvelopeError::NoRecipients);
    }
    if recipients.len() > u16::MAX as usize {
        return Err(EnvelopeError::TooManyRecipients);
    }
    if recipients.iter().any(|(_, hint)| hint.len() > u16::MAX as usize) {
        return Err(EnvelopeError::HintTooLong);
    }
    // Body first: seed, then body nonce, then per-stanza randomness. This
    // ordering is what makes the body byte-identical across recipient counts
    // for the same injected randomness.
    let mut seed = [0u8; SEED_LEN];
    rng.fill_bytes(&mut seed);
    let body_key = expand_seed(&seed, BODY_KEY_LABEL);
    let body = aead_seal(&body_key, payload, &body_aad(&sender_pub), rng);
    let stanzas = recipients
        .iter()
        .map(|(pubkey, hint)| RecipientStanza {
            material: wrap_seed(pubkey, &seed, &stanza_info(hint), rng),
            hint: hint.clone(),
        })
        .collect();
    Ok(MultiRecipientEnvelope { stanzas, sender_pubkey: sender_pub, body })
}

/// Trial-unwrap the stanzas in order; any single matching stanza suffices.
pub fn decrypt(env: &MultiRecipientEnvelope, key: &KeyPair) -> Result<Vec<u8>, EnvelopeError> {
    for stanza in &env.stanzas {
        let Ok(seed) = unwrap_seed(key, &stanza.material, &stanza_info(&stanza.hint)) else {
            continue;
        };
        let body_key = expand_seed(&seed, BODY_KEY_LABEL);
        return aead_open(&body_key, &env.body, &body_aad(&env.sender_pubkey))
            .map_err(|_| EnvelopeError::Corrupt);
    }
    Err(EnvelopeError::NotARecipient)
}

/// Header size in serialized bytes (everything before the body length field).
pub fn header_len(env: &MultiRecipientEnvelope) -> usize {
    4 + 1 + 2
        + env.stanzas.iter().map(|s| SEED_WRAP_LEN + 2 + s.hint.len()).sum::<usize>()
        + 2
        + env.sender_pubkey.to_bytes().len()
}

pub fn serialize(env: &MultiRecipientEnvelope) -> Vec<u8> {
    let body = env.body.to_bytes();
    let mut out = Vec::with_capacity(header_len(env) + 8 + body.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(env.stanzas.len() as u16).to_be_bytes());
    for stanza in &env.stanzas {
        out.extend_from_slice(&stanza.material);
        out.extend_from_slice(&(stanza.hint.len() as u16).to_be_bytes());
        out.extend_from_slice(stanza.hint.as_bytes());
    }
    let sender = env.sender_pubkey.to_bytes();
    out.extend_from_slice(&(sender.len() as u16).to_be_bytes());
    out.extend_from_slice(&sender);
    out.extend_from_slice(&(body.len() as u64).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

struct HeaderCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], EnvelopeError> {
        if self.buf.len() - self.pos < n {
            return Err(EnvelopeError::Malformed { offset: self.pos, what });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, EnvelopeError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, EnvelopeError> {
        let b = self.take(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, EnvelopeError> {
        let b = self.take(8, what)?;
        Ok(u64::from_be_bytes(b.try_into().unwrap()))
    }
}

fn parse_stanza_section(c: &mut HeaderCursor) -> Result<Vec<RecipientStanza>, EnvelopeError> {
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(EnvelopeError::Malformed { offset: 0, what: "bad magic" });
    }
    let version_at = c.pos;
    let version = c.u8("version")?;
    if version != VERSION {
        return Err(EnvelopeError::Malformed { offset: version_at, what: "unsupported version" });
    }
    let count = c.u16("recipient count")?;
    let mut stanzas = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let material: [u8; SEED_WRAP_LEN] =
            c.take(SEED_WRAP_LEN, "stanza material")?.try_into().unwrap();
        let hint_len = c.u16("hint length")? as usize;
        let hint_at = c.pos;
        let hint = std::str::from_utf8(c.take(hint_len, "hint")?)
            .map_err(|_| EnvelopeError::Malformed { offset: hint_at, what: "hint not utf-8" })?
            .to_string();
        stanzas.push(RecipientStanza { material, hint });
    }
    Ok(stanzas)
}

/// Extract the plaintext routing hints, in stanza order. Performs zero
/// cryptographic operations and does not require the body to be present.
pub fn parse_hints(env_bytes: &[u8]) -> Result<Vec<String>, EnvelopeError> {
    let mut c = HeaderCursor { buf: env_bytes, pos: 0 };
    Ok(parse_stanza_section(&mut c)?.into_iter().map(|s| s.hint).collect())
}

pub fn deserialize(env_bytes: &[u8]) -> Result<MultiRecipientEnvelope, EnvelopeError> {
    let mut c = HeaderCursor { buf: env_bytes, pos: 0 };
    let stanzas = parse_stanza_section(&mut c)?;
    let sender_at = c.pos;
    let sender_len = c.u16("sender key length")? as usize;
    if sender_len != crate::crypto::PUBLIC_KEY_LEN {
        return Err(EnvelopeError::Malformed { offset: sender_at, what: "sender key length" });
    }
    let sender: [u8; crate::crypto::PUBLIC_KEY_LEN] =
        c.take(sender_len, "sender key")?.try_into().unwrap();
    let body_len = c.u64("body length")? as usize;
    let body_at = c.pos;
    let body_raw = c.take(body_len, "body")?;
    if c.pos != env_bytes.len() {
        return Err(EnvelopeError::Malformed { offset: c.pos, what: "trailing bytes" });
    }
    let body = AeadCiphertext::from_bytes(body_raw)
        .map_err(|_| EnvelopeError::Malformed { offset: body_at, what: "body too short" })?;
    Ok(MultiRecipientEnvelope { stanzas, sender_pubkey: PublicKey::from_bytes(&sender), body })
}
