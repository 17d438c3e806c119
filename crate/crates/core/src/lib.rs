//! Desk-scale laboratory for studying how interleaved speech-text language
//! models scale with compute.
//!
//! The pipeline mirrors a production speech-LM training stack at toy size:
//! synthetic time-aligned corpora ([`corpus`]), a joint text/speech-unit
//! vocabulary with per-speaker unit codebooks ([`tokenize`]), modality
//! interleaving and sequence packing ([`interleave`], [`shard`]), a small
//! decoder-only transformer trained with exact backprop ([`lm`]), ISO-FLOP
//! experiment planning under the C = 6·N·D accounting identity ([`planner`]),
//! scaling-law fitting ([`scalefit`]), and likelihood-pair benchmarks plus
//! generation diagnostics ([`evalsuite`]).

pub mod corpus;
pub mod evalsuite;
pub mod interleave;
pub mod lm;
pub mod planner;
pub mod scalefit;
pub mod shard;
pub mod tokenize;
pub mod util;
