//! End-to-end stages shared by the command-line tool, the acceptance suite
//! and the benches: loading programs and corpora, training, scanning and
//! evaluation, plus the on-disk model directory.
//!
//! A model directory holds three files:
//!
//! * `embedding.bin`: vocabulary and embedding matrix,
//! * `model.bin`: classifier parameters, carrying the SHA-256 of
//!   `embedding.bin`,
//! * `training.json`: the [`TrainingReport`], with both file hashes.
//!
//! Loading refuses a `model.bin` whose recorded hash does not match the
//! `embedding.bin` next to it.

mod config;

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    compute_metrics, generate_corpus, localization_metrics, read_manifest, split_dataset, write_manifest,
    CorpusError, EvalMetrics, LocalizationMetrics, ManifestEntry, SyntheticSample, SyntheticSpec,
};
use crate::dex::{load_ir, parse_dex, DexError, DexProgram, IrError};
use crate::embed::{
    api_frequency_stats, build_vocab, filtered_len, read_embedding, train_skipgram, vectorize,
    write_embedding, ApiVocab, EmbedError, EmbeddingMatrix, PaddedVectorSequence,
};
use crate::extract::{build_cross_reference, extract_sequence, BehaviorSequence, ExtractionConfig, TraversalStats};
use crate::localize::{
    generate_report, select_methods, suspect_scores, top_k_suspects, LocalizeError, Report, ReportMeta,
};
use crate::nn::{predict, read_model, train, train_joint, write_model, DetectionModel, EpochStats, NnError, TrainConfig};
use crate::{sha256_hex, ContainerError, Label};

pub use config::{
    ClassifierConfig, CorpusConfig, LocalizationConfig, OutputFormat, PathsConfig, PipelineConfig,
    SplitConfig, VocabConfig,
};

pub const EMBEDDING_FILE: &str = "embedding.bin";
pub const MODEL_FILE: &str = "model.bin";
pub const TRAINING_FILE: &str = "training.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Dex {
        path: PathBuf,
        #[source]
        source: DexError,
    },
    #[error("{}: {source}", path.display())]
    Ir {
        path: PathBuf,
        #[source]
        source: IrError,
    },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Classifier(#[from] NnError),
    #[error(transparent)]
    Localize(#[from] LocalizeError),
    #[error("{}: {source}", path.display())]
    ModelFile {
        path: PathBuf,
        #[source]
        source: ContainerError,
    },
    #[error("model files do not belong together: {0}")]
    ModelMismatch(String),
}

impl PipelineError {
    /// Process exit code: 1 usage or config, 2 input, 3 model.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::ModelFile { .. } | PipelineError::ModelMismatch(_) => 3,
            PipelineError::Classifier(NnError::DimensionMismatch { .. }) => 3,
            _ => 2,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// A parsed program and its extracted behavior sequence.
#[derive(Debug, Clone)]
pub struct LoadedProgram {
    pub path: PathBuf,
    pub program: DexProgram,
    pub sequence: BehaviorSequence,
    pub stats: TraversalStats,
    pub meta: ReportMeta,
}

fn program_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Parse a `.dex` file or a textual IR document. Files are told apart by
/// the DEX magic, not the extension.
pub fn load_program(path: &Path) -> Result<(DexProgram, Vec<u8>), PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    let program = if bytes.starts_with(b"dex\n") {
        parse_dex(&bytes).map_err(|source| PipelineError::Dex {
            path: path.to_path_buf(),
            source,
        })?
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| PipelineError::Ir {
            path: path.to_path_buf(),
            source: IrError::SchemaViolation("neither DEX nor UTF-8 text".into()),
        })?;
        let mut p = load_ir(text).map_err(|source| PipelineError::Ir {
            path: path.to_path_buf(),
            source,
        })?;
        p.name = program_name(path);
        p
    };
    Ok((program, bytes))
}

/// Parse and extract one file.
pub fn extract_file(path: &Path, config: &ExtractionConfig) -> Result<LoadedProgram, PipelineError> {
    let (program, bytes) = load_program(path)?;
    let graph = build_cross_reference(&program);
    let (sequence, stats) = extract_sequence(&program, &graph, config);
    let meta = ReportMeta {
        file_name: path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        file_size: Some(bytes.len() as u64),
        sha256: Some(sha256_hex(&bytes)),
        permissions: Vec::new(),
    };
    Ok(LoadedProgram {
        path: path.to_path_buf(),
        program,
        sequence,
        stats,
        meta,
    })
}

/// Extract many files in parallel; results keep the input order.
pub fn extract_files(
    paths: &[PathBuf],
    config: &ExtractionConfig,
) -> Vec<Result<LoadedProgram, PipelineError>> {
    paths.par_iter().map(|p| extract_file(p, config)).collect()
}

/// Regular files directly inside `dir`, or `dir` itself when it is a file,
/// sorted by path.
pub fn collect_inputs(path: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let meta = std::fs::metadata(path).map_err(|e| PipelineError::io(path, e))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| PipelineError::io(path, e))? {
        let entry = entry.map_err(|e| PipelineError::io(path, e))?;
        if entry.file_type().map_err(|e| PipelineError::io(path, e))?.is_file() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// A labeled program with its ground truth, ready for training or
/// evaluation.
#[derive(Debug, Clone)]
pub struct CorpusSample {
    pub id: String,
    pub label: Label,
    pub planted: Vec<String>,
    pub program: DexProgram,
    pub sequence: BehaviorSequence,
}

/// Load every program named in a manifest. IR paths are relative to the
/// manifest's directory.
pub fn load_corpus(manifest: &Path, config: &ExtractionConfig) -> Result<Vec<CorpusSample>, PipelineError> {
    let file = std::fs::File::open(manifest).map_err(|e| PipelineError::io(manifest, e))?;
    let entries = read_manifest(BufReader::new(file)).map_err(|e| PipelineError::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    entries
        .par_iter()
        .map(|e| {
            let path = if e.ir_path.is_absolute() {
                e.ir_path.clone()
            } else {
                base.join(&e.ir_path)
            };
            let loaded = extract_file(&path, config)?;
            Ok(CorpusSample {
                id: e.id.clone(),
                label: e.label,
                planted: e.planted.clone(),
                program: loaded.program,
                sequence: loaded.sequence,
            })
        })
        .collect()
}

/// Build corpus samples straight from generated programs.
pub fn synthetic_samples(
    samples: &[SyntheticSample],
    config: &ExtractionConfig,
) -> Result<Vec<CorpusSample>, PipelineError> {
    samples
        .par_iter()
        .map(|s| {
            let program = s.doc.to_program(&s.id).map_err(|source| PipelineError::Ir {
                path: PathBuf::from(&s.id),
                source,
            })?;
            let graph = build_cross_reference(&program);
            let (sequence, _) = extract_sequence(&program, &graph, config);
            Ok(CorpusSample {
                id: s.id.clone(),
                label: s.label,
                planted: s.planted.clone(),
                program,
                sequence,
            })
        })
        .collect()
}

/// Write `count` generated programs as `ir/<id>.json` plus a manifest.
pub fn write_synthetic_corpus(
    dir: &Path,
    spec: &SyntheticSpec,
    count: usize,
) -> Result<Vec<ManifestEntry>, PipelineError> {
    let samples = generate_corpus(spec, count)?;
    let ir_dir = dir.join("ir");
    std::fs::create_dir_all(&ir_dir).map_err(|e| PipelineError::io(&ir_dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let rel = PathBuf::from("ir").join(format!("{}.json", s.id));
        let mut doc = s.doc.clone();
        doc.label = Some(s.label);
        let path = dir.join(&rel);
        std::fs::write(&path, doc.to_json()).map_err(|e| PipelineError::io(&path, e))?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            label: s.label,
            ir_path: rel,
            planted: s.planted.clone(),
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let mut buf = Vec::new();
    write_manifest(&mut buf, &entries).map_err(|e| PipelineError::io(&path, e))?;
    std::fs::write(&path, buf).map_err(|e| PipelineError::io(&path, e))?;
    Ok(entries)
}

/// Vocabulary, embedding and classifier trained together.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub vocab: ApiVocab,
    pub embedding: EmbeddingMatrix,
    pub model: DetectionModel,
}

impl TrainedModel {
    pub fn vectorize(&self, sequence: &BehaviorSequence) -> PaddedVectorSequence {
        vectorize(&sequence.apis, &self.vocab, &self.embedding, self.model.max_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy over the training split after the epoch.
    pub loss: f64,
    pub train_accuracy: f64,
    pub validation: Option<EvalMetrics>,
}

/// What `training.json` records about a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub vocab_size: usize,
    pub filtered_apis: usize,
    pub input_len: usize,
    pub skipgram_loss: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub embedding_sha256: String,
    pub model_sha256: String,
}

fn labels_of(samples: &[CorpusSample]) -> Vec<Label> {
    samples.iter().map(|s| s.label).collect()
}

/// Detection metrics of `model` over `samples`.
pub fn detection_metrics(model: &TrainedModel, samples: &[&CorpusSample]) -> Result<EvalMetrics, PipelineError> {
    let outcomes: Vec<(Label, Label)> = samples
        .par_iter()
        .map(|s| Ok((s.label, predict(&model.model, &model.vectorize(&s.sequence))?.label)))
        .collect::<Result<_, NnError>>()?;
    Ok(compute_metrics(&outcomes)?)
}

/// Frequency statistics, vocabulary, skip-gram and classifier, all fitted
/// on the training split. `on_epoch` sees every epoch as it finishes.
pub fn train_model<F>(
    samples: &[CorpusSample],
    config: &PipelineConfig,
    mut on_epoch: F,
) -> Result<(TrainedModel, TrainingReport), PipelineError>
where
    F: FnMut(&EpochRecord),
{
    let config = config.effective();
    config.validate()?;
    let split = split_dataset(&labels_of(samples), config.split.ratios(), config.seed)?;
    let train_set: Vec<&CorpusSample> = split.train.iter().map(|&i| &samples[i]).collect();
    let validation: Vec<&CorpusSample> = split.validation.iter().map(|&i| &samples[i]).collect();

    let stats = api_frequency_stats(train_set.iter().map(|s| (s.label, s.sequence.apis.as_slice())))?;
    let vocab = build_vocab(&stats, config.vocab.threshold, config.vocab.rule);
    let (embedding, skipgram_loss) =
        train_skipgram(train_set.iter().map(|s| s.sequence.apis.as_slice()), &vocab, &config.skipgram)?;
    let input_len = train_set
        .iter()
        .map(|s| filtered_len(&s.sequence.apis, &vocab))
        .max()
        .unwrap_or(0)
        .max(1);

    let model = DetectionModel::new(embedding.dim(), config.classifier.hidden, input_len, config.seed);
    let mut trained = TrainedModel {
        vocab,
        embedding,
        model,
    };

    let data: Vec<(PaddedVectorSequence, Label)> = train_set
        .par_iter()
        .map(|s| (trained.vectorize(&s.sequence), s.label))
        .collect();
    let validation_x: Vec<(PaddedVectorSequence, Label)> = validation
        .par_iter()
        .map(|s| (trained.vectorize(&s.sequence), s.label))
        .collect();
    let train_config = TrainConfig {
        epochs: config.classifier.epochs,
        batch: config.classifier.batch,
        lr: config.classifier.lr,
        clip_norm: config.classifier.clip_norm,
        seed: config.seed,
        ..TrainConfig::default()
    };
    let mut epochs = Vec::with_capacity(train_config.epochs);
    let mut record_epoch = |stats: &EpochStats, m: &DetectionModel, emb: Option<&EmbeddingMatrix>| {
        let validation = if validation_x.is_empty() {
            None
        } else {
            let outcomes: Vec<(Label, Label)> = validation_x
                .par_iter()
                .map(|(x, y)| {
                    let p = match emb {
                        Some(e) => predict(m, &x.with_embedding(e)),
                        None => predict(m, x),
                    };
                    (*y, p.expect("validated input").label)
                })
                .collect();
            compute_metrics(&outcomes).ok()
        };
        let record = EpochRecord {
            epoch: stats.epoch,
            loss: stats.loss,
            train_accuracy: stats.accuracy,
            validation,
        };
        on_epoch(&record);
        epochs.push(record);
    };
    if config.classifier.fine_tune_embedding {
        train_joint(&mut trained.model, &mut trained.embedding, &data, &train_config, |s, m, e| {
            record_epoch(s, m, Some(e))
        })?;
    } else {
        train(&mut trained.model, &data, &train_config, |s, m| record_epoch(s, m, None))?;
    }
    let embedding_bytes = write_embedding(&trained.vocab, &trained.embedding);
    let embedding_sha256 = sha256_hex(&embedding_bytes);
    trained
        .model
        .embedding_hash
        .copy_from_slice(&hex::decode(&embedding_sha256).expect("hex digest"));

    let ids = |idx: &[usize]| idx.iter().map(|&i| samples[i].id.clone()).collect();
    let report = TrainingReport {
        seed: config.seed,
        train_ids: ids(&split.train),
        validation_ids: ids(&split.validation),
        test_ids: ids(&split.test),
        vocab_size: trained.vocab.len(),
        filtered_apis: trained.vocab.filtered_count(),
        input_len,
        skipgram_loss,
        epochs,
        embedding_sha256,
        model_sha256: sha256_hex(&write_model(&trained.model)),
    };
    Ok((trained, report))
}

/// Write the three model files; returns their paths.
pub fn save_model(dir: &Path, model: &TrainedModel, report: &TrainingReport) -> Result<[PathBuf; 3], PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let paths = [dir.join(EMBEDDING_FILE), dir.join(MODEL_FILE), dir.join(TRAINING_FILE)];
    let json = serde_json::to_vec_pretty(report).expect("report serializes");
    let contents = [
        write_embedding(&model.vocab, &model.embedding),
        write_model(&model.model),
        json,
    ];
    for (p, c) in paths.iter().zip(contents) {
        std::fs::write(p, c).map_err(|e| PipelineError::io(p, e))?;
    }
    Ok(paths)
}

/// Read a model directory, checking that `model.bin` was trained on the
/// `embedding.bin` beside it.
pub fn load_model(dir: &Path) -> Result<TrainedModel, PipelineError> {
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read(&p).map(|b| (p.clone(), b)).map_err(|e| PipelineError::Io {
            path: p,
            source: e,
        })
    };
    let (emb_path, emb_bytes) = read(EMBEDDING_FILE)?;
    let (model_path, model_bytes) = read(MODEL_FILE)?;
    let (vocab, embedding) = read_embedding(&emb_bytes).map_err(|source| PipelineError::ModelFile {
        path: emb_path,
        source,
    })?;
    let model = read_model(&model_bytes).map_err(|source| PipelineError::ModelFile {
        path: model_path,
        source,
    })?;
    let actual = sha256_hex(&emb_bytes);
    let recorded = hex::encode(model.embedding_hash);
    if actual != recorded {
        return Err(PipelineError::ModelMismatch(format!(
            "{MODEL_FILE} expects embedding {recorded}, {EMBEDDING_FILE} is {actual}"
        )));
    }
    if model.v() != embedding.dim() {
        return Err(PipelineError::ModelMismatch(format!(
            "classifier input width {} but embedding width {}",
            model.v(),
            embedding.dim()
        )));
    }
    Ok(TrainedModel {
        vocab,
        embedding,
        model,
    })
}

pub fn read_training_report(dir: &Path) -> Result<TrainingReport, PipelineError> {
    let p = dir.join(TRAINING_FILE);
    let bytes = std::fs::read(&p).map_err(|e| PipelineError::io(&p, e))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Input(format!("{}: {e}", p.display())))
}

/// Verdict for one program, with a report when it is malicious.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanOutcome {
    pub label: Label,
    pub p_malicious: f64,
    pub report: Option<Report>,
}

/// Ranked suspicious method signatures (at most `n`) for one program.
pub fn rank_methods(
    model: &TrainedModel,
    program: &DexProgram,
    sequence: &BehaviorSequence,
    k: usize,
    n: usize,
) -> Result<Vec<String>, PipelineError> {
    let x = model.vectorize(sequence);
    let pred = predict(&model.model, &x)?;
    let suspects = top_k_suspects(&pred.trace, x.positions(), sequence, k)?;
    Ok(select_methods(&suspect_scores(&suspects), n, program)
        .iter()
        .map(|m| program.method_signature(m.method))
        .collect())
}

pub fn scan_program(
    model: &TrainedModel,
    program: &DexProgram,
    sequence: &BehaviorSequence,
    loc: &LocalizationConfig,
    meta: &ReportMeta,
) -> Result<ScanOutcome, PipelineError> {
    let x = model.vectorize(sequence);
    let pred = predict(&model.model, &x)?;
    let report = if pred.label == Label::Malicious {
        let suspects = top_k_suspects(&pred.trace, x.positions(), sequence, loc.k)?;
        let methods = select_methods(&suspect_scores(&suspects), loc.n, program);
        Some(generate_report(program, sequence, &pred.trace, &suspects, &methods, meta))
    } else {
        None
    };
    Ok(ScanOutcome {
        label: pred.label,
        p_malicious: pred.p[0],
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: String,
    pub truth: Label,
    pub predicted: Label,
    pub p_malicious: f64,
    /// Ranked suspicious methods; only computed for truly malicious samples.
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detection: EvalMetrics,
    /// At the configured `n`, over truly malicious samples; `None` when
    /// there are none.
    pub localization: Option<LocalizationMetrics>,
    /// One entry per `n` in `1..=sweep`, empty without a sweep.
    pub sweep: Vec<LocalizationMetrics>,
    pub samples: Vec<SampleOutcome>,
}

/// Detection over all samples and localization over the truly malicious
/// ones, whatever their verdict.
pub fn evaluate_samples(
    model: &TrainedModel,
    samples: &[&CorpusSample],
    loc: &LocalizationConfig,
    sweep: usize,
) -> Result<EvalReport, PipelineError> {
    let depth = loc.n.max(sweep);
    let outcomes: Vec<SampleOutcome> = samples
        .par_iter()
        .map(|s| {
            let x = model.vectorize(&s.sequence);
            let pred = predict(&model.model, &x)?;
            let methods = if s.label == Label::Malicious {
                let suspects = top_k_suspects(&pred.trace, x.positions(), &s.sequence, loc.k)?;
                select_methods(&suspect_scores(&suspects), depth, &s.program)
                    .iter()
                    .map(|m| s.program.method_signature(m.method))
                    .collect()
            } else {
                Vec::new()
            };
            Ok(SampleOutcome {
                id: s.id.clone(),
                truth: s.label,
                predicted: pred.label,
                p_malicious: pred.p[0],
                methods,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    let detection = compute_metrics(&outcomes.iter().map(|o| (o.truth, o.predicted)).collect::<Vec<_>>())?;

    let mut reports = BTreeMap::new();
    let mut truth = BTreeMap::new();
    for (o, s) in outcomes.iter().zip(samples) {
        if s.label == Label::Malicious {
            if reports.insert(o.id.clone(), o.methods.clone()).is_some() {
                return Err(PipelineError::Input(format!("duplicate sample id {}", o.id)));
            }
            truth.insert(o.id.clone(), s.planted.clone());
        }
    }
    let (localization, sweep) = if reports.is_empty() {
        (None, Vec::new())
    } else {
        let at = localization_metrics(&reports, &truth, loc.n)?;
        let curve = (1..=sweep)
            .map(|n| localization_metrics(&reports, &truth, n))
            .collect::<Result<_, _>>()?;
        (Some(at), curve)
    };
    Ok(EvalReport {
        detection,
        localization,
        sweep,
        samples: outcomes,
    })
}

/// Aligned plain-text rendering of an [`EvalReport`].
pub fn render_eval_table(report: &EvalReport) -> String {
    let d = &report.detection;
    let mut out = String::new();
    out.push_str("detection\n");
    out.push_str(&format!(
        "  {:<10} {:>8}\n  {:<10} {:>8}\n  {:<10} {:>8}\n  {:<10} {:>8}\n",
        "tp", d.tp, "fp", d.fp, "tn", d.tn, "fn", d.fn_
    ));
    for (name, v) in [
        ("accuracy", d.accuracy),
        ("precision", d.precision),
        ("recall", d.recall),
        ("f1", d.f1),
        ("fpr", d.fpr),
    ] {
        out.push_str(&format!("  {name:<10} {v:>8.4}\n"));
    }
    if let Some(l) = &report.localization {
        out.push_str(&format!(
            "localization (n = {}, {} samples)\n  {:<10} {:>8.4}\n  {:<10} {:>8.4}\n",
            l.n, l.samples, "hit rate", l.hit_rate, "accuracy", l.accuracy
        ));
    }
    if !report.sweep.is_empty() {
        out.push_str(&format!("  {:>4} {:>9} {:>9}\n", "n", "hit rate", "accuracy"));
        for l in &report.sweep {
            out.push_str(&format!("  {:>4} {:>9.4} {:>9.4}\n", l.n, l.hit_rate, l.accuracy));
        }
    }
    out
}
