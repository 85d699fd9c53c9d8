//! Key pairs, signatures and hash-derived account identifiers.
//!
//! Ed25519 signs and SHA-256 derives account ids and record digests. Keys are
//! derived from a 64-bit seed so every simulated identity is reproducible.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("public key must be {PUBLIC_KEY_LEN} bytes, got {0}")]
    KeyLength(usize),
    #[error("malformed hex digest: {0}")]
    Hex(String),
}

/// 32-byte SHA-256 digest. Used for tx ids, chain links and account ids.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn of_parts(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u32).to_be_bytes());
            h.update(p);
        }
        Digest(h.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First eight hex characters, for logs.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|_| CryptoError::Hex(s.to_string()))?;
        let arr: [u8; DIGEST_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::Hex(s.to_string()))?;
        Ok(Digest(arr))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Account identifier: the SHA-256 digest of exactly one public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(pub Digest);

impl AccountId {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        self.0.as_bytes()
    }

    pub fn short(&self) -> String {
        self.0.short()
    }
}

impl fmt::Debug for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "acct:{}", self.0.short())
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl FromStr for AccountId {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(AccountId(s.parse()?))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; PUBLIC_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::KeyLength(bytes.len()))?;
        Ok(PublicKey(arr))
    }

    pub fn account_id(&self) -> AccountId {
        AccountId(Digest::of(&self.0))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pk:{}", hex::encode(&self.0[..4]))
    }
}

/// Signature bytes together with the signer's public key.
///
/// Carrying the key lets any node check a record without a key directory;
/// the signer's account id is recomputed from it, never trusted.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub public_key: PublicKey,
    pub bytes: [u8; SIGNATURE_LEN],
}

impl Signature {
    pub fn signer(&self) -> AccountId {
        self.public_key.account_id()
    }

    /// Checks the signature against its embedded key.
    pub fn verify(&self, message: &[u8]) -> bool {
        verify(&self.public_key, message, self)
    }

    /// A syntactically well-formed but meaningless signature.
    pub fn forged(public_key: PublicKey) -> Self {
        Signature {
            public_key,
            bytes: [0xAB; SIGNATURE_LEN],
        }
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sig({:?}, {})",
            self.signer(),
            hex::encode(&self.bytes[..4])
        )
    }
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn secret_key(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn account_id(&self) -> AccountId {
        self.public_key().account_id()
    }

    pub fn from_secret(secret: [u8; 32]) -> Self {
        KeyPair {
            signing: SigningKey::from_bytes(&secret),
        }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.secret_key() == other.secret_key()
    }
}

impl Eq for KeyPair {}

/// Derives a key pair from a seed. The secret is SHA-256 over a domain tag and
/// the big-endian seed, so the result does not depend on platform or RNG.
pub fn generate_keypair(seed: u64) -> KeyPair {
    let secret = Digest::of_parts(&[b"parchain/keygen/v1", &seed.to_be_bytes()]);
    KeyPair::from_secret(secret.0)
}

pub fn account_id(public_key: &[u8]) -> Result<AccountId, CryptoError> {
    Ok(PublicKey::from_slice(public_key)?.account_id())
}

pub fn sign(key: &KeyPair, message: &[u8]) -> Signature {
    let sig = key.signing.sign(message);
    Signature {
        public_key: key.public_key(),
        bytes: sig.to_bytes(),
    }
}

thread_local! {
    static VERIFIED: RefCell<HashMap<Digest, bool>> = RefCell::new(HashMap::new());
}

const VERIFY_MEMO_CAP: usize = 1 << 20;

/// True iff `signature` was produced by the secret key matching `public_key`
/// over exactly `message`. Malformed keys verify as false.
///
/// Results are memoized per thread keyed by a digest of (key, signature,
/// message); verification is a pure function so the memo is unobservable.
pub fn verify(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    if signature.public_key != *public_key {
        return false;
    }
    let key = Digest::of_parts(&[&public_key.0, &signature.bytes, message]);
    if let Some(hit) = VERIFIED.with(|m| m.borrow().get(&key).copied()) {
        return hit;
    }
    let ok = verify_uncached(public_key, message, signature);
    VERIFIED.with(|m| {
        let mut m = m.borrow_mut();
        if m.len() >= VERIFY_MEMO_CAP {
            m.clear();
        }
        m.insert(key, ok);
    });
    ok
}

fn verify_uncached(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&public_key.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.bytes);
    vk.verify(message, &sig).is_ok()
}
