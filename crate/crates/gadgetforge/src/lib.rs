//! End-to-end vulnerability detection over decompiler-style pseudocode listings.
//!
//! The pipeline: parse listings into structured modules, build AST/CFG/PDG
//! layers, slice sensitive-API-anchored code gadgets, embed their tokens with
//! skip-gram word2vec, enhance per-gadget structural features with a
//! Kolmogorov-Arnold layer, and classify each gadget with a BiLSTM +
//! inception + attention + residual network trained from scratch on a
//! reverse-mode autodiff tape.

pub mod autodiff;
pub mod cli;
pub mod corpusgen;
pub mod network;
pub mod embedding;
pub mod eval;
pub mod gadgets;
pub mod graphs;
pub mod ingest;
pub mod kan;

pub(crate) mod digest;
