use super::skipgram::EmbeddingMatrix;
use super::vocab::{ApiVocab, Token};

/// Fixed-size classifier input: `len` rows of width `dim`, real rows first.
///
/// Only stored rows take memory; rows past the stored prefix read as zero.
/// Vectorized inputs store just their valid rows.
#[derive(Debug, Clone)]
pub struct PaddedVectorSequence {
    len: usize,
    dim: usize,
    data: Vec<f64>,
    zero: Vec<f64>,
    valid_len: usize,
    /// Original sequence index of each valid row.
    positions: Vec<usize>,
    /// Vocabulary index of each valid row, `None` for unknown APIs.
    tokens: Vec<Option<u32>>,
}

impl PartialEq for PaddedVectorSequence {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len
            && self.dim == other.dim
            && self.valid_len == other.valid_len
            && self.positions == other.positions
            && self.tokens == other.tokens
            && self.to_dense() == other.to_dense()
    }
}

impl PaddedVectorSequence {
    /// Build directly from rows; rows at or past `valid_len` must be zero
    /// in any input that came from [`vectorize`], but callers may pass
    /// anything there (the classifier masks them).
    pub fn from_rows(len: usize, dim: usize, data: Vec<f64>, valid_len: usize) -> Self {
        assert_eq!(data.len(), len * dim, "data is not len x dim");
        assert!(valid_len <= len, "valid_len exceeds len");
        PaddedVectorSequence {
            len,
            dim,
            data,
            zero: vec![0.0; dim],
            valid_len,
            positions: (0..valid_len).collect(),
            tokens: vec![None; valid_len],
        }
    }

    /// Fixed input length `L`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn row(&self, t: usize) -> &[f64] {
        assert!(t < self.len, "row {t} out of {}", self.len);
        self.data.get(t * self.dim..(t + 1) * self.dim).unwrap_or(&self.zero)
    }

    /// Mutable row; materializes zero rows up to `t` if needed.
    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        assert!(t < self.len, "row {t} out of {}", self.len);
        let need = (t + 1) * self.dim;
        if self.data.len() < need {
            self.data.resize(need, 0.0);
        }
        &mut self.data[t * self.dim..need]
    }

    /// All `len x dim` values, row-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = self.data.clone();
        out.resize(self.len * self.dim, 0.0);
        out
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn tokens(&self) -> &[Option<u32>] {
        &self.tokens
    }

    /// The same positions re-read from `emb` (unknown tokens stay zero).
    pub fn with_embedding(&self, emb: &EmbeddingMatrix) -> PaddedVectorSequence {
        assert_eq!(emb.dim(), self.dim, "embedding width differs");
        let mut data = Vec::with_capacity(self.tokens.len() * self.dim);
        for tok in &self.tokens {
            match tok {
                Some(k) => data.extend_from_slice(emb.row(*k)),
                None => data.resize(data.len() + self.dim, 0.0),
            }
        }
        PaddedVectorSequence {
            data,
            zero: vec![0.0; self.dim],
            positions: self.positions.clone(),
            tokens: self.tokens.clone(),
            ..*self
        }
    }
}

/// Map a sequence onto embedding rows: filtered APIs are dropped, unknown
/// APIs become zero rows, the result is cut or zero-padded to `len`.
///
/// # Panics
///
/// If `len` is zero.
pub fn vectorize<S: AsRef<str>>(
    seq: &[S],
    vocab: &ApiVocab,
    emb: &EmbeddingMatrix,
    len: usize,
) -> PaddedVectorSequence {
    assert!(len >= 1, "input length must be at least 1");
    let dim = emb.dim();
    let mut data = Vec::new();
    let mut positions = Vec::new();
    let mut tokens = Vec::new();
    for (i, api) in seq.iter().enumerate() {
        if positions.len() == len {
            break;
        }
        let tok = match vocab.token(api.as_ref()) {
            Token::Filtered => continue,
            Token::Known(k) => Some(k),
            Token::Unknown => None,
        };
        match tok {
            Some(k) => data.extend_from_slice(emb.row(k)),
            None => data.resize(data.len() + dim, 0.0),
        }
        positions.push(i);
        tokens.push(tok);
    }
    PaddedVectorSequence {
        len,
        dim,
        data,
        zero: vec![0.0; dim],
        valid_len: positions.len(),
        positions,
        tokens,
    }
}

/// Length of a sequence after filtering, i.e. its row count before the
/// input-size cut.
pub fn filtered_len<S: AsRef<str>>(seq: &[S], vocab: &ApiVocab) -> usize {
    seq.iter()
        .filter(|a| vocab.token(a.as_ref()) != Token::Filtered)
        .count()
}
