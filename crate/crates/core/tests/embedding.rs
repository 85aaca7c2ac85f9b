mod common;

use common::{cosine_gap, grouped_corpus};
use malseq_core::embed::{
    api_frequency_stats, build_vocab, train_skipgram, vectorize, EmbeddingMatrix, FilterRule,
    SkipGramConfig, Token,
};
use malseq_core::Label;
use proptest::prelude::*;

#[test]
fn planted_pairs_are_closer_than_random_pairs() {
    let (corpus, pairs) = grouped_corpus(7, 10, 4, 300);
    let stats = api_frequency_stats(corpus.iter().map(|s| (Label::Benign, s.as_slice()))).unwrap();
    let vocab = build_vocab(&stats, 0.75, FilterRule::Conjunction);
    let config = SkipGramConfig {
        dim: 32,
        ..Default::default()
    };
    let (emb, _) = train_skipgram(corpus.iter().map(|s| s.as_slice()), &vocab, &config).unwrap();
    let gap = cosine_gap(&emb, &vocab, &pairs);
    assert!(gap >= 0.2, "gap {gap}");
}

#[test]
fn epoch_loss_decreases_on_structured_corpus() {
    let (corpus, _) = grouped_corpus(3, 8, 3, 200);
    let stats = api_frequency_stats(corpus.iter().map(|s| (Label::Benign, s.as_slice()))).unwrap();
    let vocab = build_vocab(&stats, 1.0, FilterRule::Conjunction);
    let config = SkipGramConfig {
        dim: 16,
        window: 2,
        epochs: 4,
        ..Default::default()
    };
    let (_, loss) = train_skipgram(corpus.iter().map(|s| s.as_slice()), &vocab, &config).unwrap();
    for w in loss.windows(2) {
        assert!(w[1] < w[0] + 1e-6, "{loss:?}");
    }
}

#[test]
fn filter_is_a_conjunction() {
    // "both" appears in 9/10 of each class; "mal" in 9/10 malicious, 1/10 benign
    let mut corpus = Vec::new();
    for i in 0..10 {
        let mut m = vec!["Landroid/x/M;->m()V"];
        let mut b = vec!["Landroid/x/B;->b()V"];
        if i < 9 {
            m.push("Landroid/x/Both;->c()V");
            b.push("Landroid/x/Both;->c()V");
            m.push("Landroid/x/Mal;->m()V");
        } else {
            b.push("Landroid/x/Mal;->m()V");
        }
        corpus.push((Label::Malicious, m));
        corpus.push((Label::Benign, b));
    }
    let stats = api_frequency_stats(corpus.iter().map(|(l, s)| (*l, s.as_slice()))).unwrap();
    let vocab = build_vocab(&stats, 0.75, FilterRule::Conjunction);
    assert_eq!(vocab.token("Landroid/x/Both;->c()V"), Token::Filtered);
    assert!(matches!(vocab.token("Landroid/x/Mal;->m()V"), Token::Known(_)));
    let any = build_vocab(&stats, 0.75, FilterRule::Disjunction);
    assert_eq!(any.token("Landroid/x/Mal;->m()V"), Token::Filtered);
}

fn labeled_corpus() -> impl Strategy<Value = Vec<(bool, Vec<u8>)>> {
    prop::collection::vec((any::<bool>(), prop::collection::vec(0u8..12, 0..20)), 1..25)
}

fn api(k: u8) -> String {
    format!("Landroid/t/T{k};->f()V")
}

proptest! {
    #[test]
    fn vocab_ignores_corpus_order(corpus in labeled_corpus(), rot in 0usize..25) {
        let docs: Vec<(Label, Vec<String>)> = corpus
            .iter()
            .map(|(m, s)| (if *m { Label::Malicious } else { Label::Benign }, s.iter().map(|&k| api(k)).collect()))
            .collect();
        let mut shuffled = docs.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        shuffled.reverse();
        let a = build_vocab(&api_frequency_stats(docs.iter().map(|(l, s)| (*l, s.as_slice()))).unwrap(), 0.75, FilterRule::Conjunction);
        let b = build_vocab(&api_frequency_stats(shuffled.iter().map(|(l, s)| (*l, s.as_slice()))).unwrap(), 0.75, FilterRule::Conjunction);
        prop_assert_eq!(&a, &b);
        // dense indices
        for (i, name) in a.apis().iter().enumerate() {
            prop_assert_eq!(a.index_of(name), Some(i as u32));
        }
    }

    #[test]
    fn vectorize_keeps_provenance(seq in prop::collection::vec(0u8..14, 0..40), len in 1usize..30) {
        // 12 and 13 are out of vocabulary, 0 is filtered
        let docs: Vec<(Label, Vec<String>)> = vec![
            (Label::Benign, (0u8..12).map(api).collect()),
            (Label::Malicious, vec![api(0)]),
        ];
        let stats = api_frequency_stats(docs.iter().map(|(l, s)| (*l, s.as_slice()))).unwrap();
        let vocab = build_vocab(&stats, 0.75, FilterRule::Conjunction);
        prop_assert_eq!(vocab.token(&api(0)), Token::Filtered);
        let l = vocab.len();
        let emb = EmbeddingMatrix::from_rows(l, 3, (0..l * 3).map(|x| x as f64 + 0.5).collect());
        let names: Vec<String> = seq.iter().map(|&k| api(k)).collect();
        let p = vectorize(&names, &vocab, &emb, len);
        let kept = names.iter().filter(|n| vocab.token(n) != Token::Filtered).count();
        prop_assert_eq!(p.valid_len(), kept.min(len));
        for (row, &orig) in p.positions().iter().enumerate() {
            match vocab.token(&names[orig]) {
                Token::Known(k) => prop_assert_eq!(p.row(row), emb.row(k)),
                Token::Unknown => prop_assert!(p.row(row).iter().all(|&x| x == 0.0)),
                Token::Filtered => prop_assert!(false, "filtered API kept"),
            }
        }
        prop_assert!(p.positions().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(p.to_dense()[p.valid_len() * 3..].iter().all(|&x| x == 0.0));
    }
}
