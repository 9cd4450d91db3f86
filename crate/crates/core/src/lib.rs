//! Deterministic federated-learning simulator with greedy client filtering.
//!
//! The simulator layers a public-dataset filtering stage under client
//! selection: each round the available clients are pruned by a double-greedy
//! pass over a set-valued reward (the negated public loss of the clients'
//! averaged parameters), and selection then draws participants from the
//! filtered-in pool. Everything downstream of the experiment seed is
//! bit-reproducible, including under parallel client training.

pub mod config;
pub mod data;
pub mod dataset;
pub mod error;
pub mod filtering;
pub mod model;
pub mod orchestrator;
pub mod report;
pub mod rng;
pub mod selection;
pub mod vector;

pub use error::{Error, Result};

/// Identifier of a client in the federation.
#[derive(
    Clone,
    Copy,
    Debug,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    serde::Serialize,
    serde::Deserialize,
)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl std::fmt::Display for ClientId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
