//! Vocabulary and embedding container.
//!
//! All integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "MSEQEMB\0"
//! version    u32      1
//! l          u64      vocabulary size
//! v          u64      embedding dimension
//! threshold  f64
//! rule       u8       0 conjunction, 1 disjunction
//! l records:
//!   index      u32    equal to the record position
//!   signature  u32 byte length + UTF-8
//!   malicious  f64
//!   benign     f64
//!   all        f64
//!   filtered   u8     0 or 1
//! W          l*v f64, row-major
//! ```

use super::skipgram::EmbeddingMatrix;
use super::vocab::{ApiVocab, FilterRule, FrequencyTriple};
use crate::codec::{ContainerError, Reader, Writer};

const MAGIC: &[u8; 8] = b"MSEQEMB\0";
const VERSION: u32 = 1;

pub fn write_embedding(vocab: &ApiVocab, emb: &EmbeddingMatrix) -> Vec<u8> {
    assert_eq!(vocab.len(), emb.rows(), "vocabulary and matrix disagree on l");
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u64(vocab.len() as u64);
    w.u64(emb.dim() as u64);
    w.f64(vocab.threshold);
    w.u8(vocab.rule.code());
    for (i, api) in vocab.apis().iter().enumerate() {
        let f = vocab.frequency(i as u32);
        w.u32(i as u32);
        w.str(api);
        w.f64(f.malicious);
        w.f64(f.benign);
        w.f64(f.all);
        w.u8(u8::from(vocab.is_filtered(i as u32)));
    }
    w.f64s(emb.as_slice());
    w.buf
}

pub fn read_embedding(bytes: &[u8]) -> Result<(ApiVocab, EmbeddingMatrix), ContainerError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, "MSEQEMB")?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let l = r.count(33)?;
    let v = r.u64()? as usize;
    let threshold = r.f64()?;
    let rule = FilterRule::from_code(r.u8()?)
        .ok_or_else(|| ContainerError::Invalid("unknown filter rule".into()))?;
    let mut apis = Vec::with_capacity(l);
    let mut freqs = Vec::with_capacity(l);
    let mut filtered = Vec::with_capacity(l);
    for i in 0..l {
        if r.u32()? as usize != i {
            return Err(ContainerError::Invalid(format!("record {i} has wrong index")));
        }
        let api = r.str()?;
        if apis.last().is_some_and(|prev: &String| *prev >= api) {
            return Err(ContainerError::Invalid(format!("vocabulary not sorted at {api}")));
        }
        apis.push(api);
        freqs.push(FrequencyTriple {
            malicious: r.f64()?,
            benign: r.f64()?,
            all: r.f64()?,
        });
        filtered.push(match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(ContainerError::Invalid("bad filtered flag".into())),
        });
    }
    let n = l
        .checked_mul(v)
        .ok_or_else(|| ContainerError::Invalid("l * v overflows".into()))?;
    let data = r.f64s(n)?;
    r.finish()?;
    if data.iter().any(|x| !x.is_finite()) {
        return Err(ContainerError::Invalid("non-finite embedding value".into()));
    }
    Ok((
        ApiVocab::from_parts(apis, freqs, filtered, threshold, rule),
        EmbeddingMatrix::from_rows(l, v, data),
    ))
}
