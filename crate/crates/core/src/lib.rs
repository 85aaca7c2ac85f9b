//! Static behavior-sequence analysis of DEX bytecode.
//!
//! The pipeline: [`dex`] parses programs, [`extract`] builds the call graph
//! and flattens invocations into API sequences, [`embed`] builds the
//! vocabulary and skip-gram vectors, [`nn`] classifies sequences with a
//! bidirectional LSTM and attention, and [`localize`] turns attention weights
//! into ranked suspicious methods and reports. [`corpus`] generates synthetic
//! labeled programs and computes metrics; [`pipeline`] wires the stages
//! together for the command-line tool.

mod codec;
pub mod corpus;
pub mod dex;
pub mod embed;
pub mod extract;
mod label;
pub mod localize;
pub mod nn;
pub mod pipeline;

pub use codec::{sha256_hex, ContainerError};
pub use label::Label;
