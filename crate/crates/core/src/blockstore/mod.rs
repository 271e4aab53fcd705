//! Encrypted block arrays in the balls-and-bins model.
//!
//! The server side of every scheme is a [`BlockStore`]: `m` fixed-length
//! ciphertext cells addressed `1..=m` that support exactly two operations,
//! download and upload. Backends: [`MemoryStore`], [`FileStore`] and
//! [`RemoteStore`] (which talks to a [`BlockServer`] over the framed wire
//! protocol in [`wire`]). [`CountingStore`] wraps any backend and is the
//! ground truth for overhead accounting.

mod cipher;
mod counting;
mod file;
mod memory;
mod remote;
mod server;
pub mod wire;

use serde::{Deserialize, Serialize};

pub use cipher::{
    ciphertext_len, AeadCipher, Cipher, CipherKey, TransparentCipher, CIPHERTEXT_OVERHEAD,
};
pub use counting::{Access, AccessKind, CountingStore};
pub use file::FileStore;
pub use memory::MemoryStore;
pub use remote::RemoteStore;
pub use server::{handle_session, BlockServer, SharedStore};

use crate::error::{Error, Result};

/// Default plaintext block size in bytes.
pub const DEFAULT_BLOCK_SIZE: usize = 1024;

/// A plaintext record: an opaque, fixed-length ball.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block(#[serde(with = "hex")] pub Vec<u8>);

impl Block {
    pub fn zeroed(size: usize) -> Self {
        Block(vec![0; size])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl std::fmt::Debug for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let shown = &self.0[..self.0.len().min(8)];
        write!(f, "Block({} bytes, {}..)", self.0.len(), hex::encode(shown))
    }
}

impl From<Vec<u8>> for Block {
    fn from(v: Vec<u8>) -> Self {
        Block(v)
    }
}

/// The encrypted form of a [`Block`]; the only thing a server ever stores.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext(pub Vec<u8>);

impl Ciphertext {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl std::fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Ciphertext({} bytes)", self.0.len())
    }
}

/// Server storage: `cells()` ciphertext cells of `cell_len()` bytes, 1-based.
pub trait BlockStore {
    fn cells(&self) -> u64;

    fn cell_len(&self) -> usize;

    /// Reads cell `addr`. Does not change server state.
    fn download(&mut self, addr: u64) -> Result<Ciphertext>;

    /// Overwrites cell `addr` with `ct`.
    fn upload(&mut self, addr: u64, ct: &Ciphertext) -> Result<()>;
}

impl<S: BlockStore + ?Sized> BlockStore for &mut S {
    fn cells(&self) -> u64 {
        (**self).cells()
    }
    fn cell_len(&self) -> usize {
        (**self).cell_len()
    }
    fn download(&mut self, addr: u64) -> Result<Ciphertext> {
        (**self).download(addr)
    }
    fn upload(&mut self, addr: u64, ct: &Ciphertext) -> Result<()> {
        (**self).upload(addr, ct)
    }
}

impl<S: BlockStore + ?Sized> BlockStore for Box<S> {
    fn cells(&self) -> u64 {
        (**self).cells()
    }
    fn cell_len(&self) -> usize {
        (**self).cell_len()
    }
    fn download(&mut self, addr: u64) -> Result<Ciphertext> {
        (**self).download(addr)
    }
    fn upload(&mut self, addr: u64, ct: &Ciphertext) -> Result<()> {
        (**self).upload(addr, ct)
    }
}

pub(crate) fn check_addr(addr: u64, cells: u64) -> Result<()> {
    if addr == 0 || addr > cells {
        return Err(Error::Address { addr, cells });
    }
    Ok(())
}

pub(crate) fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Frame(format!(
            "payload is {got} bytes, cells hold {want}"
        )));
    }
    Ok(())
}
