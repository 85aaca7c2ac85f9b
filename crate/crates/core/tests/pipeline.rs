use malseq_core::corpus::{generate_corpus, SyntheticSpec};
use malseq_core::pipeline::{
    load_model, read_training_report, save_model, scan_program, synthetic_samples, train_model, CorpusSample,
    PipelineConfig, PipelineError, EMBEDDING_FILE,
};
use malseq_core::{sha256_hex, Label};

fn small_config(fine_tune: bool) -> PipelineConfig {
    let mut c = PipelineConfig {
        seed: 3,
        ..Default::default()
    };
    c.skipgram.dim = 12;
    c.skipgram.epochs = 2;
    c.classifier.hidden = 8;
    c.classifier.epochs = 3;
    c.classifier.lr = 1e-2;
    c.classifier.fine_tune_embedding = fine_tune;
    c
}

fn corpus(config: &PipelineConfig, count: usize) -> Vec<CorpusSample> {
    let eff = config.effective();
    let raw = generate_corpus(&eff.corpus.spec, count).unwrap();
    synthetic_samples(&raw, &eff.extraction).unwrap()
}

#[test]
fn fine_tuned_embedding_is_saved_and_bound_to_the_model() {
    let frozen_cfg = small_config(false);
    let tuned_cfg = small_config(true);
    let samples = corpus(&frozen_cfg, 60);
    let (frozen, frozen_report) = train_model(&samples, &frozen_cfg, |_| {}).unwrap();
    let (tuned, tuned_report) = train_model(&samples, &tuned_cfg, |_| {}).unwrap();
    assert_eq!(frozen_report.train_ids, tuned_report.train_ids);
    assert_ne!(frozen.embedding, tuned.embedding);
    assert_ne!(frozen_report.embedding_sha256, tuned_report.embedding_sha256);
    // filtered rows have no gradient and stay zero
    for i in 0..tuned.vocab.len() as u32 {
        if tuned.vocab.is_filtered(i) {
            assert!(tuned.embedding.row(i).iter().all(|&x| x == 0.0));
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("frozen"), dir.path().join("tuned"));
    save_model(&a, &frozen, &frozen_report).unwrap();
    save_model(&b, &tuned, &tuned_report).unwrap();
    let loaded = load_model(&b).unwrap();
    assert_eq!(loaded.embedding, tuned.embedding);
    assert_eq!(
        sha256_hex(&std::fs::read(b.join(EMBEDDING_FILE)).unwrap()),
        read_training_report(&b).unwrap().embedding_sha256
    );

    std::fs::copy(a.join(EMBEDDING_FILE), b.join(EMBEDDING_FILE)).unwrap();
    let err = load_model(&b).unwrap_err();
    assert!(matches!(err, PipelineError::ModelMismatch(_)), "{err:?}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn reports_exist_only_for_malicious_verdicts() {
    let config = small_config(false);
    let samples = corpus(&config, 40);
    let (model, _) = train_model(&samples, &config, |_| {}).unwrap();
    for s in &samples {
        let out = scan_program(&model, &s.program, &s.sequence, &config.localization, &Default::default()).unwrap();
        assert_eq!(out.report.is_some(), out.label == Label::Malicious);
        if let Some(r) = out.report {
            assert!(r.details.len() <= config.localization.n);
            assert_eq!(r.brief.p_malicious, out.p_malicious);
        }
    }
}

#[test]
fn default_spec_is_what_the_config_generates() {
    let c = PipelineConfig::default().effective();
    assert_eq!(c.corpus.spec, SyntheticSpec { seed: c.seed, ..SyntheticSpec::default() });
}
