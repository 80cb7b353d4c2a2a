//! Rank-1 softmax attention as a contextual mapping.
//!
//! Constructions and verifiers for separated token data, the Boltzmann
//! operator, certified scalar projections, attention kernels, memorizers,
//! a grid-based approximator and a small trainable rank-1 Transformer.

pub mod approximator;
pub mod attention;
pub mod boltzmann;
pub mod cli;
pub mod error;
pub mod ffn;
pub mod memorizer;
pub mod numeric;
pub mod projection;
pub mod report;
pub mod sequences;
pub mod training;

pub use error::{Error, Result};
