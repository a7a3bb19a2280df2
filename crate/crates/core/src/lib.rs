//! Decoding symbolic object and action states from per-layer policy
//! activations with linear probes.
//!
//! The crate bundles the whole workbench:
//!
//! - [`world`]: a kinematic pick-and-place tabletop with a scripted policy,
//!   renderer and episode files.
//! - [`schema`]: grounded predicates, the canonical atom ordering and
//!   ground-truth detectors.
//! - [`embeddings`]: a seeded synthetic activation encoder and the binary
//!   activation trace format.
//! - [`probe`]: dataset assembly, episode-level splits, label filtering,
//!   multi-label logistic probes trained with Adam, evaluation and the
//!   per-layer sweep with heatmap export.
//! - [`belief`]: predicate conversion, a belief store with change events and
//!   rule-based consistency checks.
//! - [`service`]: the WebSocket monitor that streams frames and predicted
//!   states.
//! - [`cli`]: the `vlaprobe` command line.

pub mod belief;
pub mod cli;
pub mod embeddings;
pub mod error;
pub mod probe;
pub mod schema;
pub mod service;
pub mod world;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
