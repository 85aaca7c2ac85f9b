use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::EmbedError;
use crate::Label;

/// Fraction of programs containing an API, per class and overall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTriple {
    pub malicious: f64,
    pub benign: f64,
    pub all: f64,
}

impl FrequencyTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.malicious, self.benign, self.all]
    }
}

/// Per-API program frequencies over a labeled corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    pub malicious_programs: usize,
    pub benign_programs: usize,
    pub apis: BTreeMap<String, FrequencyTriple>,
}

/// Count, for every API, the fraction of programs (not occurrences) that
/// contain it. A class with no programs contributes fraction 0.
pub fn api_frequency_stats<'a, I, S>(corpus: I) -> Result<FrequencyTable, EmbedError>
where
    I: IntoIterator<Item = (Label, &'a [S])>,
    S: AsRef<str> + 'a,
{
    let mut counts: BTreeMap<&'a str, [usize; 2]> = BTreeMap::new();
    let mut per_class = [0usize; 2];
    for (label, apis) in corpus {
        let c = label.class_index();
        per_class[c] += 1;
        let distinct: BTreeSet<&str> = apis.iter().map(AsRef::as_ref).collect();
        for api in distinct {
            counts.entry(api).or_default()[c] += 1;
        }
    }
    let total = per_class[0] + per_class[1];
    if total == 0 {
        return Err(EmbedError::EmptyCorpus);
    }
    let frac = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let apis = counts
        .into_iter()
        .map(|(api, [m, b])| {
            let t = FrequencyTriple {
                malicious: frac(m, per_class[0]),
                benign: frac(b, per_class[1]),
                all: frac(m + b, total),
            };
            (api.to_string(), t)
        })
        .collect();
    Ok(FrequencyTable {
        malicious_programs: per_class[0],
        benign_programs: per_class[1],
        apis,
    })
}

/// How the three frequencies combine into the filter decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterRule {
    /// Filter when the API is above threshold in malicious, benign and all.
    #[default]
    Conjunction,
    /// Filter when any one of the three is above threshold.
    Disjunction,
}

impl FilterRule {
    pub fn filters(self, t: &FrequencyTriple, threshold: f64) -> bool {
        let above = t.as_array().map(|f| f > threshold);
        match self {
            FilterRule::Conjunction => above.iter().all(|&a| a),
            FilterRule::Disjunction => above.iter().any(|&a| a),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            FilterRule::Conjunction => 0,
            FilterRule::Disjunction => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<FilterRule> {
        match c {
            0 => Some(FilterRule::Conjunction),
            1 => Some(FilterRule::Disjunction),
            _ => None,
        }
    }
}

/// What a sequence element becomes at vectorization time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Known(u32),
    Filtered,
    Unknown,
}

/// API vocabulary with dense indices in signature order.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiVocab {
    apis: Vec<String>,
    index: HashMap<String, u32>,
    freqs: Vec<FrequencyTriple>,
    filtered: Vec<bool>,
    pub threshold: f64,
    pub rule: FilterRule,
}

impl ApiVocab {
    pub(crate) fn from_parts(
        apis: Vec<String>,
        freqs: Vec<FrequencyTriple>,
        filtered: Vec<bool>,
        threshold: f64,
        rule: FilterRule,
    ) -> ApiVocab {
        let index = apis
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i as u32))
            .collect();
        ApiVocab {
            apis,
            index,
            freqs,
            filtered,
            threshold,
            rule,
        }
    }

    /// Vocabulary size `l`, filtered APIs included.
    pub fn len(&self) -> usize {
        self.apis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apis.is_empty()
    }

    pub fn index_of(&self, api: &str) -> Option<u32> {
        self.index.get(api).copied()
    }

    pub fn api(&self, index: u32) -> &str {
        &self.apis[index as usize]
    }

    pub fn apis(&self) -> &[String] {
        &self.apis
    }

    pub fn frequency(&self, index: u32) -> &FrequencyTriple {
        &self.freqs[index as usize]
    }

    pub fn is_filtered(&self, index: u32) -> bool {
        self.filtered[index as usize]
    }

    pub fn filtered_count(&self) -> usize {
        self.filtered.iter().filter(|&&f| f).count()
    }

    pub fn token(&self, api: &str) -> Token {
        match self.index_of(api) {
            Some(i) if self.is_filtered(i) => Token::Filtered,
            Some(i) => Token::Known(i),
            None => Token::Unknown,
        }
    }
}

/// Index every observed API and flag the ones that are common enough to
/// carry no class signal.
///
/// # Panics
///
/// If `threshold` is outside `(0, 1]`.
pub fn build_vocab(stats: &FrequencyTable, threshold: f64, rule: FilterRule) -> ApiVocab {
    assert!(
        threshold > 0.0 && threshold <= 1.0,
        "threshold must be in (0, 1], got {threshold}"
    );
    let apis: Vec<String> = stats.apis.keys().cloned().collect();
    let freqs: Vec<FrequencyTriple> = stats.apis.values().copied().collect();
    let filtered = freqs.iter().map(|t| rule.filters(t, threshold)).collect();
    ApiVocab::from_parts(apis, freqs, filtered, threshold, rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(corpus: &[(Label, Vec<&str>)]) -> FrequencyTable {
        api_frequency_stats(corpus.iter().map(|(l, s)| (*l, s.as_slice()))).unwrap()
    }

    #[test]
    fn counts_programs_not_occurrences() {
        let t = table(&[
            (Label::Malicious, vec!["a", "a", "a"]),
            (Label::Malicious, vec!["a"]),
            (Label::Benign, vec!["a", "b"]),
            (Label::Benign, vec!["b"]),
        ]);
        assert_eq!(
            t.apis["a"],
            FrequencyTriple {
                malicious: 1.0,
                benign: 0.5,
                all: 0.75
            }
        );
        assert!(!t.apis.contains_key("c"));
    }

    #[test]
    fn empty_corpus() {
        let empty: Vec<(Label, &[String])> = Vec::new();
        assert_eq!(api_frequency_stats(empty), Err(EmbedError::EmptyCorpus));
    }

    #[test]
    fn conjunction_needs_all_three() {
        let hi = FrequencyTriple {
            malicious: 0.9,
            benign: 0.9,
            all: 0.9,
        };
        let one = FrequencyTriple {
            malicious: 0.9,
            benign: 0.1,
            all: 0.5,
        };
        assert!(FilterRule::Conjunction.filters(&hi, 0.75));
        assert!(!FilterRule::Conjunction.filters(&one, 0.75));
        assert!(FilterRule::Disjunction.filters(&one, 0.75));
        assert!(!FilterRule::Conjunction.filters(&hi, 1.0));
    }

    #[test]
    fn threshold_is_strict() {
        let edge = FrequencyTriple {
            malicious: 0.75,
            benign: 1.0,
            all: 0.9,
        };
        assert!(!FilterRule::Conjunction.filters(&edge, 0.75));
    }

    #[test]
    fn indices_follow_signature_order() {
        let t = table(&[(Label::Malicious, vec!["z", "b"]), (Label::Benign, vec!["m"])]);
        let v = build_vocab(&t, 0.75, FilterRule::Conjunction);
        assert_eq!(v.apis(), &["b", "m", "z"]);
        assert_eq!(v.index_of("z"), Some(2));
        assert_eq!(v.token("q"), Token::Unknown);
    }

    #[test]
    #[should_panic(expected = "threshold")]
    fn zero_threshold_rejected() {
        let t = table(&[(Label::Benign, vec!["m"])]);
        build_vocab(&t, 0.0, FilterRule::Conjunction);
    }
}
