//! Contextual biasing for a frozen sequence recognizer.
//!
//! A tree-constrained pointer generator reads a biasing list compiled into a
//! wordpiece prefix tree and shifts probability mass toward list words at
//! every decoding step. Around it sit the pieces needed to train and
//! evaluate it: vocabulary and tokenization, a synthetic base recognizer,
//! beam search, internal-LM-corrected N-best rescoring, biasing-list
//! construction and rare-word error rates.

pub mod basemodel;
pub mod biaslists;
pub mod cli;
pub mod bigram;
pub mod decoder;
pub mod error;
pub mod rescore;
pub mod score;
pub mod seed;
pub mod synth;
pub mod tcpgen;
pub mod textproc;
pub mod trie;

pub use error::{Error, Result};
