//! Differentially private access to outsourced storage.
//!
//! * [`blockstore`]: the server in the balls-and-bins model (memory, file and
//!   TCP backends) plus block encryption.
//! * [`dpir`]: stateless retrieval that hides the target among `K` uniform
//!   downloads and errs with probability `alpha`.
//! * [`dpram`]: errorless read/write access with a probabilistic client stash.
//! * [`mapping`]: oblivious two-choice hashing over a forest of small trees.
//! * [`dpkvs`]: key-value storage composing the forest with a bucket-level
//!   DP-RAM.
//! * [`audit`]: exact and Monte Carlo measurement of the transcript
//!   distributions the schemes produce.
//! * [`bench`]: server-side overhead measurement.
//!
//! Probability code is generic over [`Probability`]; the aliases below fix the
//! two instantiations used throughout.

pub mod audit;
pub mod bench;
pub mod blockstore;
pub mod dpir;
pub mod dpkvs;
pub mod dpram;
mod error;
pub mod mapping;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Probability;

/// Arbitrary-precision rational; every exact check runs in this type.
pub type Exact = num_rational::BigRational;

/// Floating-point probabilities for estimates and large instances.
pub type Approx = f64;

/// Exact distribution over DP-RAM transcripts.
pub type ExactRamDistribution = audit::TraceDistribution<audit::RamTranscript, Exact>;

/// Monte Carlo estimate of a DP-RAM transcript distribution.
pub type EstimatedRamDistribution = audit::TraceDistribution<audit::RamTranscript, Approx>;

/// Exact distribution over DP-IR transcripts.
pub type ExactIrDistribution = audit::TraceDistribution<dpir::IrTranscript, Exact>;
