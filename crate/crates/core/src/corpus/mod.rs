//! Synthetic labeled corpora, dataset splits and evaluation metrics.

mod metrics;
mod synth;

use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Label;

pub use metrics::{
    compute_metrics, localization_metrics, split_dataset, EvalMetrics, LocalizationMetrics, Split,
};
pub use synth::{generate_corpus, generate_synthetic_program, SyntheticSample, SyntheticSpec};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
    #[error("no predictions")]
    EmptyPredictions,
    #[error("reports and ground truth are not aligned: {0}")]
    MisalignedSets(String),
    #[error("bad split ratios: {0}")]
    BadRatios(String),
}

/// One line of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    /// IR file, relative to the manifest's directory unless absolute.
    pub ir_path: PathBuf,
    /// Signatures of planted malicious methods.
    pub planted: Vec<String>,
}

pub fn write_manifest<W: Write>(mut out: W, entries: &[ManifestEntry]) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: R) -> std::io::Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("manifest line {}: {e}", i + 1))
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrip() {
        let entries = vec![ManifestEntry {
            id: "s00000".into(),
            label: Label::Malicious,
            ir_path: "ir/s00000.json".into(),
            planted: vec!["La;->a()V".into()],
        }];
        let mut buf = Vec::new();
        write_manifest(&mut buf, &entries).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"id\":\"s00000\",\"label\":\"malicious\",\"ir_path\":\"ir/s00000.json\",\"planted\":[\"La;->a()V\"]}\n"
        );
        assert_eq!(read_manifest(&buf[..]).unwrap(), entries);
    }
}
