//! Text-to-text modeling toolkit for source code and natural language.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`corpus`] — line-record task datasets, validation, and registries
//! * [`normalize`] — language-aware lexing, literal abstraction, and
//!   space-joined token strings
//! * [`subword`] — unigram-language-model subword vocabularies with
//!   deterministic Viterbi encoding
//! * [`objective`] — supervised example building and span-corruption
//!   self-supervision
//! * [`mixture`] — examples-proportional multi-task sampling and batching
//! * [`model`] — a small pre-norm encoder-decoder transformer with manual
//!   backprop and greedy decoding
//! * [`trainer`] — the four training regimes (single-task, transfer,
//!   multi-task, multi-task + fine-tune) with early stopping and per-task
//!   checkpoint selection
//! * [`metrics`] — smoothed BLEU-4, corpus BLEU-4, ROUGE-L, and exact match
//! * [`cli`] — the `codetext` binary's subcommand dispatch
//!
//! Every stage takes explicit seeds and emits a [`manifest::RunManifest`]
//! so runs can be replayed byte-for-byte. See the crate `examples/`
//! directory for one runnable program per capability.

pub mod cli;
pub mod corpus;
pub mod manifest;
pub mod metrics;
pub mod mixture;
pub mod model;
pub mod normalize;
pub mod objective;
mod seeds;
pub mod subword;
pub mod synth;
pub mod trainer;
