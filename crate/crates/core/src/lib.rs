//! Persona and knowledge grounding over token-level late interaction.
//!
//! The crate is `no_std` (with `alloc`) and holds every numerical piece of the
//! pipeline: tokenization and the dialogue data model, deterministic token
//! embeddings and the trainable dimension reduction, TF-IDF / feed-forward
//! token saliency, the sparse symmetric normalized late-interaction kernel,
//! the post-fusion grounding heads, the composite imbalance-aware objective
//! with analytic gradients, and the evaluation metrics.
//!
//! File formats, the synthetic corpus generator and the command-line surface
//! live in the `comac` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod grounding;
pub mod latesim;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod saliency;

pub use error::{Error, Result};
