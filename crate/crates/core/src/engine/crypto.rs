//! AES-GCM sealing of records crossing the enclave boundary.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes128Gcm, Nonce, Tag};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::record::EventRecord;

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

/// The key compiled into every enclave when the configuration names none.
pub const DEFAULT_KEY: Key128 = Key128([
    0x2b, 0x7e, 0x15, 0x16, 0x28, 0xae, 0xd2, 0xa6, 0xab, 0xf7, 0x15, 0x88, 0x09, 0xcf, 0x4f, 0x3c,
]);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("authentication tag mismatch")]
    AuthFailure,
    #[error("decrypted payload is not a record: {0}")]
    MalformedPayload(String),
    #[error("invalid key: {0}")]
    InvalidKey(String),
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Key128(pub [u8; 16]);

impl Default for Key128 {
    fn default() -> Self {
        DEFAULT_KEY
    }
}

impl fmt::Debug for Key128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Key128(..)")
    }
}

impl fmt::Display for Key128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for Key128 {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.trim()).map_err(|e| CryptoError::InvalidKey(e.to_string()))?;
        let arr: [u8; 16] = bytes
            .try_into()
            .map_err(|b: Vec<u8>| CryptoError::InvalidKey(format!("expected 16 bytes, got {}", b.len())))?;
        Ok(Key128(arr))
    }
}

impl Serialize for Key128 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Key128 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub nonce: [u8; NONCE_LEN],
    pub body: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl Ciphertext {
    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }
}

/// Encrypts records on one channel. Nonces are `channel (4 bytes) || counter
/// (8 bytes)`, so two sealers sharing a key never collide as long as their
/// channel ids differ.
pub struct Sealer {
    cipher: Aes128Gcm,
    channel: u32,
    counter: u64,
}

impl Sealer {
    pub fn new(key: &Key128, channel: u32) -> Self {
        Sealer { cipher: Aes128Gcm::new(&key.0.into()), channel, counter: 0 }
    }

    pub fn seal(&mut self, rec: &EventRecord) -> Ciphertext {
        let mut nonce = [0u8; NONCE_LEN];
        nonce[..4].copy_from_slice(&self.channel.to_be_bytes());
        nonce[4..].copy_from_slice(&self.counter.to_be_bytes());
        self.counter += 1;
        seal_with_nonce(&self.cipher, nonce, rec)
    }
}

/// Decrypts records with a fixed key.
pub struct Opener {
    cipher: Aes128Gcm,
}

impl Opener {
    pub fn new(key: &Key128) -> Self {
        Opener { cipher: Aes128Gcm::new(&key.0.into()) }
    }

    pub fn open(&self, ct: &Ciphertext) -> Result<EventRecord, CryptoError> {
        let mut buf = ct.body.clone();
        self.cipher
            .decrypt_in_place_detached(Nonce::from_slice(&ct.nonce), b"", &mut buf, Tag::from_slice(&ct.tag))
            .map_err(|_| CryptoError::AuthFailure)?;
        serde_json::from_slice(&buf).map_err(|e| CryptoError::MalformedPayload(e.to_string()))
    }
}

fn seal_with_nonce(cipher: &Aes128Gcm, nonce: [u8; NONCE_LEN], rec: &EventRecord) -> Ciphertext {
    let mut body = rec.to_json_bytes();
    let tag = cipher
        .encrypt_in_place_detached(Nonce::from_slice(&nonce), b"", &mut body)
        .expect("payload far below the GCM length limit");
    Ciphertext { nonce, body, tag: tag.into() }
}

/// One-shot encryption with a process-unique nonce.
pub fn encrypt(rec: &EventRecord, key: &Key128) -> Ciphertext {
    static PREFIX: OnceLock<u32> = OnceLock::new();
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let prefix = *PREFIX.get_or_init(rand::random::<u32>);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut nonce = [0u8; NONCE_LEN];
    nonce[..4].copy_from_slice(&prefix.to_be_bytes());
    nonce[4..].copy_from_slice(&n.to_be_bytes());
    seal_with_nonce(&Aes128Gcm::new(&key.0.into()), nonce, rec)
}

pub fn decrypt(ct: &Ciphertext, key: &Key128) -> Result<EventRecord, CryptoError> {
    Opener::new(key).open(ct)
}
