//! Heterogeneous-evidence retrieval: linearization, instruction-aware
//! encoding, three-stage training, exact search, and evaluation.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod instructions;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod textproc;
pub mod training;

pub use error::{Error, ErrorKind, Result};
