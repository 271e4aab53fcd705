use std::io;

use thiserror::Error;

/// Errors produced by the storage schemes, backends and auditor.
#[derive(Debug, Error)]
pub enum Error {
    /// Address outside `1..=cells`.
    #[error("address {addr} out of range 1..={cells}")]
    Address { addr: u64, cells: u64 },

    /// Malformed or wrongly sized frame/payload.
    #[error("frame error: {0}")]
    Frame(String),

    /// Invalid scheme parameters or malformed arguments.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Ciphertext failed authentication (wrong key or corruption).
    #[error("ciphertext failed authentication")]
    Integrity,

    /// Instance too large for exact enumeration.
    #[error("instance too large: {0}")]
    Size(String),

    /// The mapping scheme could not place a key (super root at capacity).
    #[error("mapping full: super root holds {load} of {capacity} entries")]
    Capacity { load: usize, capacity: usize },

    /// A write was attempted against a read-only deployment.
    #[error("deployment is read-only")]
    ReadOnly,

    /// Error frame returned by a remote block server.
    #[error("remote server error: {0}")]
    Remote(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
