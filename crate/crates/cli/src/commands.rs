use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use malseq_core::corpus::CorpusError;
use malseq_core::extract::{write_records, SequenceRecord, TraversalStats};
use malseq_core::localize::render_text;
use malseq_core::pipeline::{
    collect_inputs, evaluate_samples, extract_files, load_corpus, load_model, read_training_report,
    render_eval_table, save_model, scan_program, train_model, write_synthetic_corpus, CorpusSample,
    LoadedProgram, OutputFormat, PipelineConfig, PipelineError,
};
use malseq_core::Label;
use serde::Serialize;

use crate::SplitPart;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn stdout_err(e: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

/// Expand directories, then parse and extract everything. Failures abort
/// unless `skip` is set, in which case they are listed on stderr.
fn load_inputs(config: &PipelineConfig, inputs: &[PathBuf], skip: bool) -> Result<Vec<LoadedProgram>, PipelineError> {
    if inputs.is_empty() {
        return Err(PipelineError::Config("no input files given".into()));
    }
    let mut paths = Vec::new();
    for i in inputs {
        paths.extend(collect_inputs(i)?);
    }
    paths.sort();
    paths.dedup();
    let mut ok = Vec::with_capacity(paths.len());
    let mut failed = Vec::new();
    for r in extract_files(&paths, &config.extraction) {
        match r {
            Ok(p) => ok.push(p),
            Err(e) => failed.push(e),
        }
    }
    if !failed.is_empty() {
        if !skip {
            for e in &failed[1..] {
                eprintln!("error: {e}");
            }
            return Err(failed.swap_remove(0));
        }
        eprintln!("warning: skipped {} unreadable input(s):", failed.len());
        for e in &failed {
            eprintln!("  {e}");
        }
    }
    Ok(ok)
}

pub fn extract(config: &PipelineConfig, inputs: &[PathBuf], out: Option<&Path>, skip: bool) -> Result<(), PipelineError> {
    let loaded = load_inputs(config, inputs, skip)?;
    let records: Vec<SequenceRecord> = loaded
        .iter()
        .map(|l| SequenceRecord::new(&l.program.name, None, &l.program, &l.sequence))
        .collect();
    match out {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(io_err(p))?;
            write_records(std::io::BufWriter::new(f), &records).map_err(io_err(p))?;
        }
        None => write_records(std::io::stdout().lock(), &records).map_err(stdout_err)?,
    }
    eprintln!("{:<40} {:>8} {:>6} {:>9}  truncated", "file", "methods", "roots", "length");
    for l in &loaded {
        eprintln!(
            "{:<40} {:>8} {:>6} {:>9}  {}",
            l.path.display(),
            l.stats.n,
            l.stats.roots,
            l.sequence.len(),
            if l.sequence.truncated { "yes" } else { "no" }
        );
    }
    eprintln!("{} record(s)", records.len());
    Ok(())
}

#[derive(Serialize)]
struct StatsLine<'a> {
    file: String,
    #[serde(flatten)]
    stats: &'a TraversalStats,
    truncated: bool,
}

pub fn stats(config: &PipelineConfig, inputs: &[PathBuf], skip: bool) -> Result<(), PipelineError> {
    let loaded = load_inputs(config, inputs, skip)?;
    let mut out = std::io::stdout().lock();
    match config.format {
        OutputFormat::Json => {
            for l in &loaded {
                let line = StatsLine {
                    file: l.path.display().to_string(),
                    stats: &l.stats,
                    truncated: l.sequence.truncated,
                };
                writeln!(out, "{}", serde_json::to_string(&line).expect("stats serialize")).map_err(stdout_err)?;
            }
        }
        OutputFormat::Text => {
            writeln!(
                out,
                "{:<40} {:>6} {:>8} {:>8} {:>6} {:>9} {:>10}",
                "file", "n", "n_avg", "d", "roots", "length", "memo_hits"
            )
            .map_err(stdout_err)?;
            for l in &loaded {
                let s = &l.stats;
                writeln!(
                    out,
                    "{:<40} {:>6} {:>8.3} {:>8.3} {:>6} {:>9} {:>10}",
                    l.path.display(),
                    s.n,
                    s.n_avg,
                    s.d,
                    s.roots,
                    s.emitted_len,
                    s.memo_hits
                )
                .map_err(stdout_err)?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model_dir: String,
    vocab_size: usize,
    filtered_apis: usize,
    input_len: usize,
    embedding_sha256: &'a str,
    model_sha256: &'a str,
    final_loss: Option<f64>,
    validation_accuracy: Option<f64>,
}

pub fn train(config: &PipelineConfig, manifest: &Path) -> Result<(), PipelineError> {
    let samples = load_corpus(manifest, &config.extraction)?;
    eprintln!("loaded {} programs from {}", samples.len(), manifest.display());
    let (model, report) = train_model(&samples, config, |e| {
        let v = e
            .validation
            .map(|m| format!("  validation accuracy {:.4} f1 {:.4}", m.accuracy, m.f1))
            .unwrap_or_default();
        eprintln!("epoch {:>3}  loss {:.6}  train accuracy {:.4}{v}", e.epoch, e.loss, e.train_accuracy);
    })?;
    save_model(&config.paths.model_dir, &model, &report)?;
    let last = report.epochs.last();
    let summary = TrainSummary {
        model_dir: config.paths.model_dir.display().to_string(),
        vocab_size: report.vocab_size,
        filtered_apis: report.filtered_apis,
        input_len: report.input_len,
        embedding_sha256: &report.embedding_sha256,
        model_sha256: &report.model_sha256,
        final_loss: last.map(|e| e.loss),
        validation_accuracy: last.and_then(|e| e.validation).map(|m| m.accuracy),
    };
    match config.format {
        OutputFormat::Json => println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes")),
        OutputFormat::Text => {
            println!("model written to {}", summary.model_dir);
            println!("vocabulary      {} APIs ({} filtered)", summary.vocab_size, summary.filtered_apis);
            println!("input length    {}", summary.input_len);
            if let Some(a) = summary.validation_accuracy {
                println!("validation acc  {a:.4}");
            }
            println!("model sha256    {}", summary.model_sha256);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Verdict {
    file: String,
    label: Label,
    p_malicious: f64,
    report: Option<String>,
}

pub fn scan(config: &PipelineConfig, inputs: &[PathBuf], skip: bool) -> Result<(), PipelineError> {
    let model = load_model(&config.paths.model_dir)?;
    let loaded = load_inputs(config, inputs, skip)?;
    let mut out = std::io::stdout().lock();
    let mut created = false;
    for l in &loaded {
        let outcome = scan_program(&model, &l.program, &l.sequence, &config.localization, &l.meta)?;
        let report_path = match &outcome.report {
            Some(r) => {
                let dir = &config.paths.report_dir;
                if !created {
                    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
                    created = true;
                }
                let (ext, body) = match config.format {
                    OutputFormat::Json => ("json", serde_json::to_string_pretty(r).expect("report serializes")),
                    OutputFormat::Text => ("txt", render_text(r)),
                };
                let p = dir.join(format!("{}.report.{ext}", l.meta.file_name));
                std::fs::write(&p, body).map_err(io_err(&p))?;
                Some(p.display().to_string())
            }
            None => None,
        };
        let v = Verdict {
            file: l.path.display().to_string(),
            label: outcome.label,
            p_malicious: outcome.p_malicious,
            report: report_path,
        };
        let line = match config.format {
            OutputFormat::Json => serde_json::to_string(&v).expect("verdict serializes"),
            OutputFormat::Text => format!(
                "{:<9} {:.6}  {}{}",
                v.label.as_str(),
                v.p_malicious,
                v.file,
                v.report.as_deref().map(|r| format!("  -> {r}")).unwrap_or_default()
            ),
        };
        writeln!(out, "{line}").map_err(stdout_err)?;
    }
    Ok(())
}

fn select_split<'a>(
    samples: &'a [CorpusSample],
    part: SplitPart,
    model_dir: &Path,
) -> Result<Vec<&'a CorpusSample>, PipelineError> {
    if part == SplitPart::All {
        return Ok(samples.iter().collect());
    }
    let report = read_training_report(model_dir)?;
    let ids: HashSet<&String> = match part {
        SplitPart::Train => report.train_ids.iter().collect(),
        SplitPart::Validation => report.validation_ids.iter().collect(),
        SplitPart::Test => report.test_ids.iter().collect(),
        SplitPart::All => unreachable!(),
    };
    let chosen: Vec<&CorpusSample> = samples.iter().filter(|s| ids.contains(&s.id)).collect();
    if chosen.len() != ids.len() {
        return Err(PipelineError::Input(format!(
            "{} of the {} split ids are not in the manifest",
            ids.len() - chosen.len(),
            ids.len()
        )));
    }
    Ok(chosen)
}

pub fn eval(
    config: &PipelineConfig,
    manifest: &Path,
    part: SplitPart,
    sweep: Option<usize>,
    truth: Option<&Path>,
) -> Result<(), PipelineError> {
    let model = load_model(&config.paths.model_dir)?;
    let mut samples = load_corpus(manifest, &config.extraction)?;
    if let Some(path) = truth {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let map: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
        for s in samples.iter_mut().filter(|s| s.label == Label::Malicious) {
            s.planted = map
                .get(&s.id)
                .cloned()
                .ok_or_else(|| CorpusError::MisalignedSets(format!("no ground truth for {}", s.id)))?;
        }
    }
    let chosen = select_split(&samples, part, &config.paths.model_dir)?;
    let report = evaluate_samples(&model, &chosen, &config.localization, sweep.unwrap_or(0))?;
    match config.format {
        OutputFormat::Json => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
        OutputFormat::Text => print!("{}", render_eval_table(&report)),
    }
    Ok(())
}

pub fn gen_corpus(config: &PipelineConfig, dir: &Path, count: Option<usize>) -> Result<(), PipelineError> {
    let count = count.unwrap_or(config.corpus.count);
    let entries = write_synthetic_corpus(dir, &config.corpus.spec, count)?;
    let malicious = entries.iter().filter(|e| e.label == Label::Malicious).count();
    eprintln!(
        "wrote {} programs ({} malicious, {} benign) to {}",
        entries.len(),
        malicious,
        entries.len() - malicious,
        dir.display()
    );
    Ok(())
}
