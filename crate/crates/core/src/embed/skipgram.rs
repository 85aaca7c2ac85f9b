use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{ApiVocab, Token};
use super::EmbedError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    /// Embedding dimension `v`.
    pub dim: usize,
    /// Context positions on each side of the center.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to `lr * 1e-4`.
    pub lr: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 200,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            seed: 0,
        }
    }
}

/// Row-major `l x v` lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    l: usize,
    v: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn zeros(l: usize, v: usize) -> Self {
        EmbeddingMatrix {
            l,
            v,
            data: vec![0.0; l * v],
        }
    }

    pub fn from_rows(l: usize, v: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), l * v, "embedding data is not l x v");
        EmbeddingMatrix { l, v, data }
    }

    pub fn rows(&self) -> usize {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.v
    }

    pub fn row(&self, i: u32) -> &[f64] {
        let i = i as usize;
        &self.data[i * self.v..(i + 1) * self.v]
    }

    pub fn row_mut(&mut self, i: u32) -> &mut [f64] {
        let i = i as usize;
        &mut self.data[i * self.v..(i + 1) * self.v]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn cosine(&self, a: u32, b: u32) -> f64 {
        cosine(self.row(a), self.row(b))
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `-ln(sigmoid(x))`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Train skip-gram vectors with negative sampling.
///
/// Each non-filtered API in a sequence predicts every API within `window`
/// positions of it. Filtered and out-of-vocabulary APIs are dropped before
/// windows are formed. Negatives come from the unigram distribution raised
/// to 0.75. Returns the input-side matrix and the mean pair loss of every
/// epoch. Filtered rows are zero.
pub fn train_skipgram<'a, I, S>(
    corpus: I,
    vocab: &ApiVocab,
    config: &SkipGramConfig,
) -> Result<(EmbeddingMatrix, Vec<f64>), EmbedError>
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    if config.dim == 0 {
        return Err(EmbedError::ZeroDimension);
    }
    let sequences: Vec<Vec<u32>> = corpus
        .into_iter()
        .map(|s| {
            s.iter()
                .filter_map(|a| match vocab.token(a.as_ref()) {
                    Token::Known(i) => Some(i),
                    _ => None,
                })
                .collect::<Vec<u32>>()
        })
        .filter(|s| !s.is_empty())
        .collect();
    if sequences.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }

    let (l, v) = (vocab.len(), config.dim);
    let mut counts = vec![0u64; l];
    for s in &sequences {
        for &t in s {
            counts[t as usize] += 1;
        }
    }
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let noise = WeightedIndex::new(&weights).expect("some token has positive count");

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w_in = EmbeddingMatrix::zeros(l, v);
    for x in w_in.data.iter_mut() {
        *x = (rng.random::<f64>() - 0.5) / v as f64;
    }
    let mut w_out = EmbeddingMatrix::zeros(l, v);

    let pairs_per_epoch: u64 = sequences
        .iter()
        .map(|s| {
            let n = s.len();
            (0..n)
                .map(|i| (i.min(config.window) + (n - 1 - i).min(config.window)) as u64)
                .sum::<u64>()
        })
        .sum();
    let total = (pairs_per_epoch * config.epochs as u64).max(1) as f64;
    let mut seen = 0u64;
    let mut grad = vec![0.0; v];
    let mut history = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        let mut loss = 0.0;
        for s in &sequences {
            for (i, &center) in s.iter().enumerate() {
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window).min(s.len() - 1);
                for (j, &context) in s.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let lr = config.lr * (1.0 - seen as f64 / total).max(1e-4);
                    seen += 1;
                    grad.fill(0.0);
                    for k in 0..=config.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut rng) as u32;
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let vc = w_in.row(center);
                        let uo = w_out.row_mut(target);
                        let score = dot(vc, uo);
                        loss += if label == 1.0 {
                            neg_log_sigmoid(score)
                        } else {
                            neg_log_sigmoid(-score)
                        };
                        let g = lr * (label - sigmoid(score));
                        for d in 0..v {
                            grad[d] += g * uo[d];
                            uo[d] += g * vc[d];
                        }
                    }
                    for (x, g) in w_in.row_mut(center).iter_mut().zip(&grad) {
                        *x += g;
                    }
                }
            }
        }
        history.push(if pairs_per_epoch == 0 {
            0.0
        } else {
            loss / pairs_per_epoch as f64
        });
    }

    for i in 0..l as u32 {
        if vocab.is_filtered(i) {
            w_in.row_mut(i).fill(0.0);
        }
    }
    Ok((w_in, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{api_frequency_stats, build_vocab, FilterRule};
    use crate::Label;

    fn vocab_for(corpus: &[Vec<String>]) -> ApiVocab {
        let stats =
            api_frequency_stats(corpus.iter().map(|s| (Label::Benign, s.as_slice()))).unwrap();
        build_vocab(&stats, 1.0, FilterRule::Conjunction)
    }

    fn toy() -> Vec<Vec<String>> {
        (0..40)
            .map(|i| {
                let block = if i % 2 == 0 { ["a", "b", "c"] } else { ["x", "y", "z"] };
                block.iter().cycle().take(12).map(|s| s.to_string()).collect()
            })
            .collect()
    }

    #[test]
    fn log_sigmoid_matches_naive() {
        for x in [-30.0, -2.0, 0.0, 0.5, 7.0, 40.0] {
            let naive = -(1.0 / (1.0 + f64::exp(-x))).ln();
            assert!((neg_log_sigmoid(x) - naive).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn rows_have_requested_dimension() {
        let corpus = toy();
        let vocab = vocab_for(&corpus);
        let config = SkipGramConfig {
            dim: 200,
            epochs: 1,
            ..Default::default()
        };
        let (w, loss) = train_skipgram(corpus.iter().map(|s| s.as_slice()), &vocab, &config).unwrap();
        assert_eq!(w.rows(), 6);
        assert_eq!(w.dim(), 200);
        assert_eq!(loss.len(), 1);
        assert!(w.as_slice().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn errors() {
        let corpus = toy();
        let vocab = vocab_for(&corpus);
        let zero = SkipGramConfig {
            dim: 0,
            ..Default::default()
        };
        assert_eq!(
            train_skipgram(corpus.iter().map(|s| s.as_slice()), &vocab, &zero).unwrap_err(),
            EmbedError::ZeroDimension
        );
        let none: Vec<&[String]> = vec![];
        assert_eq!(
            train_skipgram(none, &vocab, &SkipGramConfig::default()).unwrap_err(),
            EmbedError::EmptyCorpus
        );
    }

    #[test]
    fn co_occurring_apis_end_up_closer() {
        let corpus = toy();
        let vocab = vocab_for(&corpus);
        let config = SkipGramConfig {
            dim: 16,
            window: 2,
            epochs: 20,
            ..Default::default()
        };
        let (w, loss) = train_skipgram(corpus.iter().map(|s| s.as_slice()), &vocab, &config).unwrap();
        let id = |s: &str| vocab.index_of(s).unwrap();
        assert!(w.cosine(id("a"), id("b")) > w.cosine(id("a"), id("x")));
        assert!(loss[0] > *loss.last().unwrap());
    }

    #[test]
    fn same_seed_same_matrix() {
        let corpus = toy();
        let vocab = vocab_for(&corpus);
        let config = SkipGramConfig {
            dim: 8,
            ..Default::default()
        };
        let run = || train_skipgram(corpus.iter().map(|s| s.as_slice()), &vocab, &config).unwrap();
        assert_eq!(run(), run());
    }
}
