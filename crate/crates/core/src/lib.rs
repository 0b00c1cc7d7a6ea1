//! Multimodal graph recommender built around three ideas: fuse modality
//! features into the interaction graph early, propagate over user-user and
//! item-item similarity graphs late, and weight each modality's ranking loss
//! by how far it lags behind the others.
//!
//! The crate is layered bottom-up:
//!
//! * [`dense`] and [`cmf`]: row-major f64 matrices and their f32 disk format.
//! * [`data`]: interaction loading, k-core filtering, per-user splits,
//!   feature alignment, and a synthetic generator for end-to-end tests.
//! * [`graph`]: CSR sparse matrices, symmetric normalization, and top-k
//!   cosine neighbor graphs.
//! * [`tape`]: a small reverse-mode autodiff engine; every differentiable
//!   piece of the model is an op on this tape.
//! * [`model`]: parameters, config, and the forward pass.
//! * [`train`]: triplet sampling, the adaptively weighted ranking loss, Adam,
//!   and the fit loop.
//! * [`eval`]: full-ranking recall and NDCG with train-item masking.
//!
//! Determinism is a contract, not an accident: all randomness flows through
//! seeded ChaCha8 generators, parallel loops only split over disjoint rows,
//! and reductions happen in fixed index order. Two runs with the same config
//! and data produce bit-identical metrics.

pub mod checkpoint;
pub mod cmf;
pub mod data;
pub mod dense;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
