//! Non-autoregressive generative retrieval over a phrase-extended target
//! vocabulary.
//!
//! The pipeline: [`vocab`] builds a phrase-inclusive tokenizer from the
//! docid corpus; [`model`] trains an encoder whose output head scores every
//! vocabulary token per output position in one parallel pass; [`shortlist`]
//! learns centroids whose precomputed token sets narrow the vocabulary per
//! query; [`decode`] runs trie-constrained beam search over the shortlist
//! (or the full softmax as an exact reference); [`eval`] measures retrieval
//! quality and latency; [`artifact`] persists everything with checksums.
//!
//! The `parallel` feature (default) runs corpus scans, batch gradients and
//! per-query decoding on rayon. Disabling it yields a dependency-free
//! sequential build with byte-identical outputs.

pub mod artifact;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod model;
pub mod par;
pub mod shortlist;
pub mod synth;
pub mod text;
pub mod trie;
pub mod vocab;

pub use error::{Error, Result};
