//! Sentiment and emotion analysis for social media text.
//!
//! The pipeline: labeled TSV corpora ([`corpus`]), tweet normalization and a
//! trainable BPE tokenizer ([`textproc`]), a small transformer or bag-of-tokens
//! classifier ([`model`]), class-weighted training with a triangular learning
//! rate ([`train`]), micro/macro F1 evaluation ([`eval`]) and a ready-to-use
//! [`analyzer::Analyzer`] backed by a single-file model format.

pub mod analyzer;
pub mod cli;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod textproc;
pub mod train;
