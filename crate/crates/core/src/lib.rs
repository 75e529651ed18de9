//! Textless cross-lingual interleaving for small spoken-unit language models.
//!
//! The crate covers the whole experiment: a bilingual discrete-unit corpus
//! model ([`corpus`]), a synthetic language generator ([`synthlang`]),
//! interleaved stream construction and packing ([`interleave`]), a causal
//! transformer with manual backpropagation ([`model`]), the staged training
//! pipeline ([`train`]), pairwise likelihood benchmarks ([`eval`]) and
//! hidden-state alignment analysis ([`analysis`]).

pub mod analysis;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod interleave;
pub mod model;
pub mod rng;
pub mod synthlang;
pub mod train;

pub use error::{Error, ErrorClass, Result};
