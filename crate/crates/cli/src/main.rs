//! `malseq`: static behavior-sequence malware detection for DEX programs.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 input error, 3 model
//! error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use malseq_core::pipeline::{OutputFormat, PipelineConfig, PipelineError};

#[derive(Parser, Debug)]
#[command(name = "malseq", version, about = "Behavior-sequence malware detection for DEX bytecode")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of k-suspect APIs per program.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Number of reported methods.
    #[arg(long = "top-n", global = true)]
    top_n: Option<usize>,
    /// Maximum extracted sequence length.
    #[arg(long = "max-len", global = true)]
    max_len: Option<usize>,
    /// Embedding width.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Classifier hidden size.
    #[arg(long, global = true)]
    hidden: Option<usize>,
    /// Frequency-filter threshold.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
    /// Report unreadable inputs and carry on instead of failing.
    #[arg(long = "skip-errors", global = true)]
    skip_errors: bool,
    /// Model directory.
    #[arg(long = "model-dir", env = "MALSEQ_MODEL_DIR", global = true)]
    model_dir: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract API sequences as line-delimited JSON records.
    Extract {
        inputs: Vec<PathBuf>,
        /// Write records here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Call-graph and traversal statistics per program.
    Stats { inputs: Vec<PathBuf> },
    /// Train vocabulary, embedding and classifier on a corpus manifest.
    Train { manifest: PathBuf },
    /// Classify programs; write a report for each malicious verdict.
    Scan {
        inputs: Vec<PathBuf>,
        #[arg(long = "report-dir")]
        report_dir: Option<PathBuf>,
    },
    /// Detection and localization metrics over a labeled corpus.
    Eval {
        manifest: PathBuf,
        /// Which part of the training split to score.
        #[arg(long, value_enum, default_value = "all")]
        split: SplitPart,
        /// Also report metrics for every n in 1..=SWEEP.
        #[arg(long)]
        sweep: Option<usize>,
        /// JSON object mapping sample id to planted method signatures;
        /// replaces the manifest's ground truth.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Write a synthetic labeled corpus (IR files plus manifest).
    GenCorpus {
        dir: PathBuf,
        #[arg(long)]
        count: Option<usize>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    All,
    Train,
    Validation,
    Test,
}

impl GlobalArgs {
    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(k) = self.k {
            c.localization.k = k;
        }
        if let Some(n) = self.top_n {
            c.localization.n = n;
        }
        if let Some(m) = self.max_len {
            c.extraction.max_len = m;
        }
        if let Some(d) = self.dim {
            c.skipgram.dim = d;
        }
        if let Some(h) = self.hidden {
            c.classifier.hidden = h;
        }
        if let Some(t) = self.threshold {
            c.vocab.threshold = t;
        }
        if let Some(f) = self.format {
            c.format = match f {
                Format::Json => OutputFormat::Json,
                Format::Text => OutputFormat::Text,
            };
        }
        if let Some(d) = &self.model_dir {
            c.paths.model_dir = d.clone();
        }
        c.validate()?;
        Ok(c.effective())
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config = cli.global.resolve()?;
    let skip = cli.global.skip_errors;
    match cli.command {
        Command::Extract { inputs, out } => commands::extract(&config, &inputs, out.as_deref(), skip),
        Command::Stats { inputs } => commands::stats(&config, &inputs, skip),
        Command::Train { manifest } => commands::train(&config, &manifest),
        Command::Scan { inputs, report_dir } => {
            let mut config = config;
            if let Some(d) = report_dir {
                config.paths.report_dir = d;
            }
            commands::scan(&config, &inputs, skip)
        }
        Command::Eval {
            manifest,
            split,
            sweep,
            truth,
        } => commands::eval(&config, &manifest, split, sweep, truth.as_deref()),
        Command::GenCorpus { dir, count } => commands::gen_corpus(&config, &dir, count),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
