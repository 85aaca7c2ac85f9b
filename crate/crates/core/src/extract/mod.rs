//! Call-graph construction and API sequence extraction.

mod callgraph;
mod dump;
mod traverse;

pub use callgraph::{build_cross_reference, find_root_methods, CallGraph};
pub use dump::{read_records, write_records, SequenceRecord};
pub use traverse::{
    extract_sequence, BehaviorSequence, ExtractionConfig, Provenance, Subsequence, TraversalStats,
};
