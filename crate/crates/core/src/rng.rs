//! Deterministic, path-derived random streams.
//!
//! Every source of randomness in a run is an `RngStream` derived from the
//! single experiment seed plus a path of context labels (round index, client
//! id, purpose). The stream key is a SHA-256 digest of the seed and path, so
//! identical `(seed, path)` pairs replay bit-identically on every platform
//! and distinct paths are independent. Execution order never feeds back into
//! the streams, which is what lets client training run in parallel without
//! changing results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq)]
enum PathElem {
    Label(&'static str),
    Index(u64),
}

/// A named, replayable random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    path: Vec<PathElem>,
}

impl RngStream {
    /// Root stream for an experiment seed.
    pub fn root(seed: u64) -> Self {
        RngStream {
            seed,
            path: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive a child stream for a named purpose.
    pub fn child(&self, label: &'static str) -> Self {
        let mut path = self.path.clone();
        path.push(PathElem::Label(label));
        RngStream {
            seed: self.seed,
            path,
        }
    }

    /// Derive a child stream for a numeric context (round, client id, ...).
    pub fn child_idx(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(PathElem::Index(index));
        RngStream {
            seed: self.seed,
            path,
        }
    }

    /// Instantiate the generator for this stream.
    ///
    /// Calling `rng()` twice on the same stream yields two identical
    /// generators; the stream itself is never consumed.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        for elem in &self.path {
            match elem {
                PathElem::Label(s) => {
                    hasher.update([0u8]);
                    hasher.update((s.len() as u64).to_le_bytes());
                    hasher.update(s.as_bytes());
                }
                PathElem::Index(i) => {
                    hasher.update([1u8]);
                    hasher.update(i.to_le_bytes());
                }
            }
        }
        let key: [u8; 32] = hasher.finalize().into();
        ChaCha12Rng::from_seed(key)
    }
}
