//! Tag commitments, the KDF ratchet, authenticated symmetric encryption and
//! the per-mixer public-key layer used for onion wrapping.
//!
//! Concrete choices: SHA-256 commitments, HMAC-SHA256 ratchet, ChaCha20-Poly1305
//! for sealing, and an X25519 ephemeral-static exchange for mixer layers. All
//! randomness is drawn from a caller-supplied RNG so simulations replay exactly.

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey, StaticSecret};

use crate::NodeId;

/// Length in bytes of preimages, commitments and symmetric keys.
pub const TOKEN_LEN: usize = 32;

const NONCE_LEN: usize = 12;
const TAG_DOMAIN: &[u8] = b"dropmix/tag-commit/v1";
const RATCHET_LABEL: &[u8] = b"dropmix/ratchet/v1";
const LAYER_DOMAIN: &[u8] = b"dropmix/mix-layer/v1";

/// Byte overhead added by [`sym_encrypt`].
pub const SYM_OVERHEAD: usize = NONCE_LEN + 16;
/// Byte overhead added by [`layer_encrypt`].
pub const LAYER_OVERHEAD: usize = 32 + 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("expected {expected} bytes, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("authenticated decryption failed")]
    DecryptionFailed,
}

macro_rules! fixed_bytes {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name([u8; TOKEN_LEN]);

        impl $name {
            pub const fn from_bytes(bytes: [u8; TOKEN_LEN]) -> Self {
                Self(bytes)
            }

            pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
                let arr: [u8; TOKEN_LEN] = bytes.try_into().map_err(|_| CryptoError::BadLength {
                    expected: TOKEN_LEN,
                    actual: bytes.len(),
                })?;
                Ok(Self(arr))
            }

            pub fn as_bytes(&self) -> &[u8; TOKEN_LEN] {
                &self.0
            }
        }

        impl std::fmt::Debug for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}(", stringify!($name))?;
                for b in &self.0[..4] {
                    write!(f, "{b:02x}")?;
                }
                write!(f, "..)")
            }
        }
    };
}

fixed_bytes!(
    /// Secret token whose commitment is stored in a board cell. Presenting it opens the cell.
    TagPreimage
);
fixed_bytes!(
    /// Hash image of a [`TagPreimage`]; the board stores this, never the preimage.
    TagCommitment
);
fixed_bytes!(
    /// Per-message symmetric key shared by the two ends of a session.
    SymmetricKey
);

impl TagPreimage {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; TOKEN_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }
}

impl SymmetricKey {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; TOKEN_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    /// Advances the ratchet, consuming the old key.
    pub fn ratchet(self) -> Self {
        kdf(&self)
    }
}

pub fn commit(preimage: &TagPreimage) -> TagCommitment {
    let mut hasher = Sha256::new();
    hasher.update(TAG_DOMAIN);
    hasher.update(preimage.as_bytes());
    TagCommitment(hasher.finalize().into())
}

pub fn verify(preimage: &TagPreimage, tag: &TagCommitment) -> bool {
    // Not constant time; side channels are out of scope for the simulator.
    commit(preimage) == *tag
}

/// One ratchet step: HMAC-SHA256 keyed by the current key over a fixed label.
pub fn kdf(key: &SymmetricKey) -> SymmetricKey {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key.as_bytes())
        .expect("HMAC accepts keys of any length");
    mac.update(RATCHET_LABEL);
    SymmetricKey(mac.finalize().into_bytes().into())
}

/// Seals `plaintext` under `key`. Output is `nonce || ciphertext || tag`.
pub fn sym_encrypt<R: RngCore + CryptoRng>(
    key: &SymmetricKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Vec<u8> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key.as_bytes()));
    let sealed = cipher
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("in-memory encryption cannot fail");
    let mut out = Vec::with_capacity(NONCE_LEN + sealed.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&sealed);
    out
}

pub fn sym_decrypt(key: &SymmetricKey, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < SYM_OVERHEAD {
        return Err(CryptoError::DecryptionFailed);
    }
    let (nonce, body) = ciphertext.split_at(NONCE_LEN);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key.as_bytes()));
    cipher
        .decrypt(Nonce::from_slice(nonce), body)
        .map_err(|_| CryptoError::DecryptionFailed)
}

/// Public half of a mixer's layer key.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct MixPublicKey(PublicKey);

impl MixPublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        self.0.as_bytes()
    }
}

impl std::fmt::Debug for MixPublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.0.as_bytes();
        write!(f, "MixPublicKey({:02x}{:02x}{:02x}{:02x}..)", b[0], b[1], b[2], b[3])
    }
}

/// Private half of a mixer's layer key.
#[derive(Clone)]
pub struct MixSecretKey(StaticSecret);

impl std::fmt::Debug for MixSecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MixSecretKey(..)")
    }
}

#[derive(Debug, Clone)]
pub struct MixKeyPair {
    pub public: MixPublicKey,
    pub secret: MixSecretKey,
    pub owner: NodeId,
}

impl MixKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(owner: NodeId, rng: &mut R) -> Self {
        let secret = StaticSecret::random_from_rng(&mut *rng);
        let public = PublicKey::from(&secret);
        Self {
            public: MixPublicKey(public),
            secret: MixSecretKey(secret),
            owner,
        }
    }
}

fn layer_key(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> Key {
    let mut hasher = Sha256::new();
    hasher.update(LAYER_DOMAIN);
    hasher.update(shared);
    hasher.update(ephemeral);
    hasher.update(recipient);
    hasher.finalize()
}

/// Seals one onion layer to a mixer. Output is `ephemeral_pk || ciphertext || tag`.
///
/// Each layer uses a fresh ephemeral key, so the derived AEAD key is single use
/// and a fixed nonce is safe.
pub fn layer_encrypt<R: RngCore + CryptoRng>(pk: &MixPublicKey, inner: &[u8], rng: &mut R) -> Vec<u8> {
    let ephemeral = StaticSecret::random_from_rng(&mut *rng);
    let ephemeral_pk = PublicKey::from(&ephemeral);
    let shared = ephemeral.diffie_hellman(&pk.0);
    let key = layer_key(shared.as_bytes(), ephemeral_pk.as_bytes(), pk.as_bytes());
    let sealed = ChaCha20Poly1305::new(&key)
        .encrypt(&Nonce::default(), inner)
        .expect("in-memory encryption cannot fail");
    let mut out = Vec::with_capacity(32 + sealed.len());
    out.extend_from_slice(ephemeral_pk.as_bytes());
    out.extend_from_slice(&sealed);
    out
}

pub fn layer_decrypt(sk: &MixSecretKey, layer: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if layer.len() < LAYER_OVERHEAD {
        return Err(CryptoError::DecryptionFailed);
    }
    let (eph, body) = layer.split_at(32);
    let eph: [u8; 32] = eph.try_into().expect("split at 32");
    let ephemeral_pk = PublicKey::from(eph);
    let shared = sk.0.diffie_hellman(&ephemeral_pk);
    let own_pk = PublicKey::from(&sk.0);
    let key = layer_key(shared.as_bytes(), &eph, own_pk.as_bytes());
    ChaCha20Poly1305::new(&key)
        .decrypt(&Nonce::default(), body)
        .map_err(|_| CryptoError::DecryptionFailed)
}
