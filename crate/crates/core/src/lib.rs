//! Drug-related named entity recognition for clinical text.
//!
//! The crate covers the full pipeline of a feature-augmented BiLSTM-CRF
//! tagger: standoff corpora and IOB encoding ([`corpus`]), externally
//! produced semantic tags ([`features`]), word vectors ([`embeddings`]),
//! the recurrent encoder with exact gradients ([`network`]), the linear-chain
//! CRF output layer ([`crf`]), RMSProp training with early stopping
//! ([`training`]) and span-level scoring ([`evaluation`]).
//!
//! All arithmetic is done in `f64`.

pub mod checkpoint;
pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod linalg;
pub mod network;
pub mod training;

pub use error::{Error, Result};
