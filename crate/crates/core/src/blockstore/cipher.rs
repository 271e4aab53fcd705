use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Block, Ciphertext};
use crate::error::{Error, Result};

const NONCE_LEN: usize = 12;
const TAG_LEN: usize = 16;

/// Bytes added to every block by either cipher: a 12-byte nonce and a 16-byte
/// tag. Both ciphers share it so a deployment's cell length does not depend on
/// whether it runs in audit mode.
pub const CIPHERTEXT_OVERHEAD: usize = NONCE_LEN + TAG_LEN;

/// Cell length for a given plaintext block size.
pub fn ciphertext_len(block_size: usize) -> usize {
    block_size + CIPHERTEXT_OVERHEAD
}

/// A 256-bit symmetric key.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherKey(#[serde(with = "hex")] [u8; 32]);

impl CipherKey {
    /// Fresh key from the operating system's CSPRNG.
    pub fn generate() -> Self {
        Self::generate_with(&mut OsRng)
    }

    pub fn generate_with<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        CipherKey(k)
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        CipherKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for CipherKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("CipherKey(..)")
    }
}

/// Randomized block encryption.
pub trait Cipher {
    /// Encrypts with fresh randomness drawn from `rng`.
    fn encrypt(&self, block: &Block, rng: &mut dyn RngCore) -> Ciphertext;

    fn decrypt(&self, ct: &Ciphertext) -> Result<Block>;
}

impl<C: Cipher + ?Sized> Cipher for Box<C> {
    fn encrypt(&self, block: &Block, rng: &mut dyn RngCore) -> Ciphertext {
        (**self).encrypt(block, rng)
    }
    fn decrypt(&self, ct: &Ciphertext) -> Result<Block> {
        (**self).decrypt(ct)
    }
}

impl<C: Cipher + ?Sized> Cipher for &C {
    fn encrypt(&self, block: &Block, rng: &mut dyn RngCore) -> Ciphertext {
        (**self).encrypt(block, rng)
    }
    fn decrypt(&self, ct: &Ciphertext) -> Result<Block> {
        (**self).decrypt(ct)
    }
}

/// AES-256-GCM with a random 96-bit nonce per message.
///
/// Layout: `nonce(12) ‖ ciphertext ‖ tag(16)`.
#[derive(Clone)]
pub struct AeadCipher {
    aead: Aes256Gcm,
}

impl AeadCipher {
    pub fn new(key: &CipherKey) -> Self {
        AeadCipher {
            aead: Aes256Gcm::new(key.as_bytes().into()),
        }
    }
}

impl Cipher for AeadCipher {
    fn encrypt(&self, block: &Block, rng: &mut dyn RngCore) -> Ciphertext {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let body = self
            .aead
            .encrypt(Nonce::from_slice(&nonce), block.as_bytes())
            .expect("AES-GCM encryption of an in-memory buffer cannot fail");
        let mut out = Vec::with_capacity(NONCE_LEN + body.len());
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&body);
        Ciphertext(out)
    }

    fn decrypt(&self, ct: &Ciphertext) -> Result<Block> {
        if ct.len() < CIPHERTEXT_OVERHEAD {
            return Err(Error::Integrity);
        }
        let (nonce, body) = ct.as_bytes().split_at(NONCE_LEN);
        self.aead
            .decrypt(Nonce::from_slice(nonce), body)
            .map(Block)
            .map_err(|_| Error::Integrity)
    }
}

/// Identity transform framed like [`AeadCipher`]: random 12-byte prefix,
/// plaintext, random 16-byte tag. For audit runs and public read-only data,
/// where ciphertext contents are not part of the observed transcript.
#[derive(Clone, Copy, Debug, Default)]
pub struct TransparentCipher;

impl Cipher for TransparentCipher {
    fn encrypt(&self, block: &Block, rng: &mut dyn RngCore) -> Ciphertext {
        let mut out = vec![0u8; block.len() + CIPHERTEXT_OVERHEAD];
        rng.fill_bytes(&mut out[..NONCE_LEN]);
        out[NONCE_LEN..NONCE_LEN + block.len()].copy_from_slice(block.as_bytes());
        rng.fill_bytes(&mut out[NONCE_LEN + block.len()..]);
        Ciphertext(out)
    }

    fn decrypt(&self, ct: &Ciphertext) -> Result<Block> {
        if ct.len() < CIPHERTEXT_OVERHEAD {
            return Err(Error::Integrity);
        }
        Ok(Block(ct.as_bytes()[NONCE_LEN..ct.len() - TAG_LEN].to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;

    fn block(byte: u8) -> Block {
        Block(vec![byte; 64])
    }

    #[test]
    fn aead_round_trip_and_freshness() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let c = AeadCipher::new(&CipherKey::generate_with(&mut rng));
        let b = block(7);
        let c1 = c.encrypt(&b, &mut rng);
        let c2 = c.encrypt(&b, &mut rng);
        assert_ne!(c1, c2);
        assert_eq!(c1.len(), ciphertext_len(64));
        assert_eq!(c.decrypt(&c1).unwrap(), b);
        assert_eq!(c.decrypt(&c2).unwrap(), b);
    }

    #[test]
    fn wrong_key_fails_authentication() {
        let k1 = CipherKey::generate();
        let k2 = CipherKey::generate();
        assert_ne!(k1, k2);
        let ct = AeadCipher::new(&k1).encrypt(&block(3), &mut OsRng);
        assert!(matches!(
            AeadCipher::new(&k2).decrypt(&ct),
            Err(Error::Integrity)
        ));
    }

    #[test]
    fn tampering_is_detected() {
        let c = AeadCipher::new(&CipherKey::generate());
        let mut ct = c.encrypt(&block(9), &mut OsRng);
        ct.0[20] ^= 1;
        assert!(matches!(c.decrypt(&ct), Err(Error::Integrity)));
        assert!(matches!(
            c.decrypt(&Ciphertext(vec![0; 5])),
            Err(Error::Integrity)
        ));
    }

    #[test]
    fn transparent_cipher_frames_like_aead() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let b = block(0xAB);
        let c1 = TransparentCipher.encrypt(&b, &mut rng);
        let c2 = TransparentCipher.encrypt(&b, &mut rng);
        assert_ne!(c1, c2);
        assert_eq!(c1.len(), ciphertext_len(b.len()));
        assert_eq!(&c1.as_bytes()[NONCE_LEN..NONCE_LEN + 64], b.as_bytes());
        assert_eq!(TransparentCipher.decrypt(&c1).unwrap(), b);
    }
}
