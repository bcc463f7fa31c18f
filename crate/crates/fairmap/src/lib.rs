//! Debias prompt embeddings for text-to-image pipelines and audit bias in
//! prompts and generated outputs.
//!
//! The crate operates entirely on embedding vectors and annotation records
//! supplied as files (or synthesized deterministically), so the full method
//! runs without any diffusion model in the loop:
//!
//! - [`lexicon`]: keywords, sensitive-attribute sets, prompt templating.
//! - [`embedding`]: the vector type, JSON Lines stores, and a deterministic
//!   synthetic encoder for tests and demos.
//! - [`network`]: the trainable stack of affine layers with checkpointing.
//! - [`training`]: the semantic-consistency and fairness losses, analytic
//!   gradients, and the full-batch descent loop.
//! - [`gradcheck`]: central finite-difference oracle for gradient
//!   verification.
//! - [`metrics`]: distribution bias, language bias, human-gated alignment,
//!   human frequency, intra-class distance, and audit-report assembly.
//! - [`detector`]: the inference-time router that decides whether a prompt's
//!   embedding passes through the mapping network.

pub mod detector;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod lexicon;
pub mod metrics;
pub mod network;
pub mod prng;
pub mod training;

pub use error::{Error, Result};
