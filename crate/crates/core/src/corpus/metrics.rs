use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::Label;

/// Detection metrics with malicious as the positive class. Ratios with a
/// zero denominator are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Metrics over `(truth, predicted)` pairs.
pub fn compute_metrics(outcomes: &[(Label, Label)]) -> Result<EvalMetrics, CorpusError> {
    if outcomes.is_empty() {
        return Err(CorpusError::EmptyPredictions);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for &(truth, pred) in outcomes {
        match (truth, pred) {
            (Label::Malicious, Label::Malicious) => tp += 1,
            (Label::Benign, Label::Malicious) => fp += 1,
            (Label::Benign, Label::Benign) => tn += 1,
            (Label::Malicious, Label::Benign) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalMetrics {
        tp,
        fp,
        tn,
        fn_,
        accuracy: ratio(tp + tn, outcomes.len()),
        precision,
        recall,
        f1,
        fpr: ratio(fp, fp + tn),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMetrics {
    /// Number of samples `N`.
    pub samples: usize,
    /// Samples with at least one correctly located method.
    pub hits: usize,
    /// Report size `n`.
    pub n: usize,
    /// Correctly located methods per sample, in sample-id order.
    pub correct: Vec<usize>,
    pub hit_rate: f64,
    pub accuracy: f64,
}

/// Score top-`n` method reports against planted ground truth. Both maps
/// are keyed by sample id and must cover the same ids; only the first `n`
/// reported methods of each sample count.
pub fn localization_metrics(
    reports: &BTreeMap<String, Vec<String>>,
    truth: &BTreeMap<String, Vec<String>>,
    n: usize,
) -> Result<LocalizationMetrics, CorpusError> {
    if let Some(id) = reports.keys().find(|k| !truth.contains_key(*k)) {
        return Err(CorpusError::MisalignedSets(format!("no ground truth for {id}")));
    }
    if let Some(id) = truth.keys().find(|k| !reports.contains_key(*k)) {
        return Err(CorpusError::MisalignedSets(format!("no report for {id}")));
    }
    let correct: Vec<usize> = reports
        .iter()
        .map(|(id, methods)| {
            let planted: BTreeSet<&String> = truth[id].iter().collect();
            let reported: BTreeSet<&String> = methods.iter().take(n).collect();
            reported.intersection(&planted).count()
        })
        .collect();
    let samples = correct.len();
    let hits = correct.iter().filter(|&&c| c > 0).count();
    let total: usize = correct.iter().sum();
    Ok(LocalizationMetrics {
        samples,
        hits,
        n,
        hit_rate: ratio(hits, samples),
        accuracy: ratio(total, samples * n),
        correct,
    })
}

/// Index sets of a three-way split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split of `labels` by `(train, validation, test)` ratios.
///
/// Within each class the indices are shuffled under `seed`, the first
/// `round(n * train)` go to training, the next `round(n * validation)` to
/// validation and the rest to test. Each part is returned sorted.
pub fn split_dataset(labels: &[Label], ratios: (f64, f64, f64), seed: u64) -> Result<Split, CorpusError> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(CorpusError::BadRatios(format!("{ratios:?} has a part outside [0, 1]")));
    }
    if ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(format!("{ratios:?} does not sum to 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for class in [Label::Malicious, Label::Benign] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let a = ((n as f64 * tr).round() as usize).min(n);
        let b = ((n as f64 * va).round() as usize).min(n - a);
        split.train.extend_from_slice(&idx[..a]);
        split.validation.extend_from_slice(&idx[a..a + b]);
        split.test.extend_from_slice(&idx[a + b..]);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
