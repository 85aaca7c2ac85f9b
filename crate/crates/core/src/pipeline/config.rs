use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::SyntheticSpec;
use crate::embed::{FilterRule, SkipGramConfig};
use crate::extract::ExtractionConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub input: Option<PathBuf>,
    pub model_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            input: None,
            model_dir: PathBuf::from("model"),
            report_dir: PathBuf::from("reports"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub threshold: f64,
    pub rule: FilterRule,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            threshold: 0.75,
            rule: FilterRule::Conjunction,
        }
    }
}

/// Classifier shape and optimizer settings. Adam's moment constants are
/// fixed at their usual values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip_norm: f64,
    /// Also update the embedding rows while training the classifier.
    pub fine_tune_embedding: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 128,
            epochs: 20,
            batch: 16,
            lr: 1e-3,
            clip_norm: 5.0,
            fine_tune_embedding: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    /// Number of k-suspect APIs per program.
    pub k: usize,
    /// Number of reported methods.
    pub n: usize,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        LocalizationConfig { k: 200, n: 9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitConfig {
    pub fn ratios(&self) -> (f64, f64, f64) {
        (self.train, self.validation, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub count: usize,
    pub spec: SyntheticSpec,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            count: 2000,
            spec: SyntheticSpec::default(),
        }
    }
}

/// Everything a command needs, loaded from one TOML file with flag
/// overrides applied on top.
///
/// `seed` drives every random stage (corpus generation, split, skip-gram,
/// weight initialization, shuffling); the per-stage seed fields are
/// overwritten from it by [`PipelineConfig::effective`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub format: OutputFormat,
    pub paths: PathsConfig,
    pub extraction: ExtractionConfig,
    pub vocab: VocabConfig,
    pub skipgram: SkipGramConfig,
    pub classifier: ClassifierConfig,
    pub localization: LocalizationConfig,
    pub split: SplitConfig,
    pub corpus: CorpusConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            format: OutputFormat::Json,
            paths: PathsConfig::default(),
            extraction: ExtractionConfig::default(),
            vocab: VocabConfig::default(),
            skipgram: SkipGramConfig::default(),
            classifier: ClassifierConfig::default(),
            localization: LocalizationConfig::default(),
            split: SplitConfig::default(),
            corpus: CorpusConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copy with the global seed pushed into every stage.
    pub fn effective(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.skipgram.seed = c.seed;
        c.corpus.spec.seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.vocab.threshold > 0.0 && self.vocab.threshold <= 1.0) {
            return bad(format!("vocab.threshold {} outside (0, 1]", self.vocab.threshold));
        }
        if self.skipgram.dim == 0 || self.classifier.hidden == 0 {
            return bad("embedding dim and hidden size must be positive".into());
        }
        if self.classifier.batch == 0 {
            return bad("classifier.batch must be positive".into());
        }
        if self.localization.k == 0 || self.localization.n == 0 {
            return bad("localization k and n must be positive".into());
        }
        if self.extraction.max_len == 0 {
            return bad("extraction.max_len must be positive".into());
        }
        self.corpus.spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let (a, b, c) = self.split.ratios();
        if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios {:?} must lie in [0, 1] and sum to 1", (a, b, c)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_stage_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.extraction.max_len, 200_000);
        assert_eq!(c.vocab.threshold, 0.75);
        assert_eq!(c.skipgram.dim, 200);
        assert_eq!(c.classifier.hidden, 128);
        assert_eq!((c.localization.k, c.localization.n), (200, 9));
        let t = crate::nn::TrainConfig::default();
        assert_eq!((c.classifier.epochs, c.classifier.batch, c.classifier.lr), (t.epochs, t.batch, t.lr));
        assert_eq!(c.classifier.clip_norm, t.clip_norm);
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let p = PipelineConfig::from_toml("seed = 7\n[classifier]\nhidden = 16\n").unwrap();
        assert_eq!(p.seed, 7);
        assert_eq!(p.classifier.hidden, 16);
        assert_eq!(p.classifier.epochs, 20);
        assert!(PipelineConfig::from_toml("[classifier]\nhiden = 16\n").is_err());
    }

    #[test]
    fn seed_reaches_every_stage() {
        let c = PipelineConfig {
            seed: 42,
            ..Default::default()
        }
        .effective();
        assert_eq!(c.skipgram.seed, 42);
        assert_eq!(c.corpus.spec.seed, 42);
    }
}
