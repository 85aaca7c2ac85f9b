//! API vocabulary, skip-gram vectors and classifier input preparation.

mod file;
mod skipgram;
mod vectorize;
mod vocab;

use thiserror::Error;

pub use file::{read_embedding, write_embedding};
pub use skipgram::{cosine, train_skipgram, EmbeddingMatrix, SkipGramConfig};
pub use vectorize::{filtered_len, vectorize, PaddedVectorSequence};
pub use vocab::{
    api_frequency_stats, build_vocab, ApiVocab, FilterRule, FrequencyTable, FrequencyTriple, Token,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmbedError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("embedding dimension must be at least 1")]
    ZeroDimension,
}
