mod common;

use common::random_ir;
use malseq_core::dex::IrDocument;
use malseq_core::extract::{build_cross_reference, extract_sequence, BehaviorSequence, ExtractionConfig};
use malseq_core::localize::{
    generate_report, render_text, select_methods, suspect_scores, top_k_suspects, ReportMeta,
};
use malseq_core::nn::AttentionTrace;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn program_and_sequence(ir: &str) -> (malseq_core::dex::DexProgram, BehaviorSequence) {
    let program = IrDocument::parse(ir).unwrap().to_program("p").unwrap();
    let graph = build_cross_reference(&program);
    let (seq, _) = extract_sequence(&program, &graph, &ExtractionConfig::default());
    (program, seq)
}

/// Normalized random weights over every position of `seq`.
fn random_trace(rng: &mut ChaCha8Rng, n: usize) -> AttentionTrace {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
    let z: f64 = raw.iter().sum();
    AttentionTrace {
        alpha: raw.iter().map(|x| x / z).collect(),
        valid_len: n,
        h: vec![],
        s: vec![],
        s_prime: vec![],
        p: [0.9, 0.1],
    }
}

const TWO_ROOTS: &str = r#"{"methods":[
    {"class":"La;","name":"onCreate","proto":"()V","invokes":["Lh;->send(Ljava/lang/String;I)Z"]},
    {"class":"Lb;","name":"onReceive","proto":"()V","invokes":["Lh;->send(Ljava/lang/String;I)Z","Landroid/util/Log;->d()I"]},
    {"class":"Lh;","name":"send","proto":"(Ljava/lang/String;I)Z","invokes":[
        "Landroid/telephony/SmsManager;->sendTextMessage()V",
        "Landroid/telephony/SmsManager;->sendTextMessage()V"]}]}"#;

#[test]
fn method_reached_from_two_roots_lists_both() {
    let (program, seq) = program_and_sequence(TWO_ROOTS);
    assert_eq!(seq.len(), 5);
    // weight concentrated on the helper's positions
    let alpha = vec![0.3, 0.3, 0.15, 0.15, 0.1];
    let trace = AttentionTrace {
        alpha,
        valid_len: 5,
        h: vec![],
        s: vec![],
        s_prime: vec![],
        p: [0.8, 0.2],
    };
    let positions: Vec<usize> = (0..5).collect();
    let suspects = top_k_suspects(&trace, &positions, &seq, 200).unwrap();
    let scores = suspect_scores(&suspects);
    let top = select_methods(&scores, 9, &program);
    assert_eq!(program.method_signature(top[0].method), "Lh;->send(Ljava/lang/String;I)Z");
    // the same API at four positions, all charged to the helper
    assert_eq!(top[0].contributing.len(), 4);
    assert!((top[0].sus - 0.9).abs() < 1e-12);
    let report = generate_report(&program, &seq, &trace, &suspects, &top, &ReportMeta::default());
    assert_eq!(report.details[0].entry_points, vec!["La;->onCreate()V", "Lb;->onReceive()V"]);
    assert_eq!(report.details[0].parameters, vec!["Ljava/lang/String;", "I"]);
    assert_eq!(report.details[0].return_type, "Z");
    assert_eq!(report.details[0].invokes[1], "0003: invoke-virtual Landroid/telephony/SmsManager;->sendTextMessage()V");
    assert_eq!(report.summary.len(), 5);
    assert_eq!(report.summary[0].alpha, 0.3);
    let json = serde_json::to_value(&report).unwrap();
    for key in ["brief", "summary", "details"] {
        assert!(json.get(key).is_some());
    }
    let text = render_text(&report);
    assert!(text.contains("== Brief ==") && text.contains("== Summary") && text.contains("== Details"));
}

#[test]
fn equal_scores_fall_back_to_signature_order() {
    let ir = r#"{"methods":[
        {"class":"Lr;","name":"r","proto":"()V","invokes":["Lz;->z()V","La;->a()V"]},
        {"class":"Lz;","name":"z","proto":"()V","invokes":["Landroid/x/X;->x()V"]},
        {"class":"La;","name":"a","proto":"()V","invokes":["Landroid/x/X;->y()V"]}]}"#;
    let (program, seq) = program_and_sequence(ir);
    let trace = AttentionTrace {
        alpha: vec![0.5, 0.5],
        valid_len: 2,
        h: vec![],
        s: vec![],
        s_prime: vec![],
        p: [0.8, 0.2],
    };
    let suspects = top_k_suspects(&trace, &[0, 1], &seq, 2).unwrap();
    let top = select_methods(&suspect_scores(&suspects), 9, &program);
    let names: Vec<String> = top.iter().map(|m| program.method_signature(m.method)).collect();
    assert_eq!(names, vec!["La;->a()V", "Lz;->z()V"]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn scores_conserve_attention_mass(seed in any::<u64>(), k in 1usize..60) {
        let doc = random_ir(seed, 25, 8);
        let program = doc.to_program("p").unwrap();
        let graph = build_cross_reference(&program);
        let (seq, _) = extract_sequence(&program, &graph, &ExtractionConfig::default());
        prop_assume!(!seq.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace = random_trace(&mut rng, seq.len());
        let positions: Vec<usize> = (0..seq.len()).collect();
        let suspects = top_k_suspects(&trace, &positions, &seq, k).unwrap();
        prop_assert_eq!(suspects.len(), k.min(seq.len()));
        let scores = suspect_scores(&suspects);
        let total: f64 = scores.iter().map(|m| m.sus).sum();
        let mass: f64 = suspects.iter().map(|s| s.alpha).sum();
        prop_assert!((total - mass).abs() < 1e-9);
        for m in &scores {
            let own: f64 = m.contributing.iter().map(|&p| trace.alpha[p]).sum();
            prop_assert!((own - m.sus).abs() < 1e-12);
            prop_assert!(m.sus > 0.0);
        }

        // uniform scaling leaves the ranking alone
        let mut scaled = trace.clone();
        scaled.alpha.iter_mut().for_each(|a| *a *= 3.5);
        let s2 = suspect_scores(&top_k_suspects(&scaled, &positions, &seq, k).unwrap());
        let order = |s: &[malseq_core::localize::MethodSuspicion]| {
            select_methods(s, usize::MAX, &program).into_iter().map(|m| m.method).collect::<Vec<_>>()
        };
        prop_assert_eq!(order(&scores), order(&s2));

        // a larger k never lowers a score
        let wider = suspect_scores(&top_k_suspects(&trace, &positions, &seq, k + 5).unwrap());
        for m in &scores {
            let w = wider.iter().find(|x| x.method == m.method).unwrap();
            prop_assert!(w.sus >= m.sus);
        }

        // reports are a function of their inputs
        let top = select_methods(&scores, 9, &program);
        let a = generate_report(&program, &seq, &trace, &suspects, &top, &ReportMeta::default());
        let b = generate_report(&program, &seq, &trace, &suspects, &top, &ReportMeta::default());
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        prop_assert!(a.details.len() <= 9);
        prop_assert!(a.details.windows(2).all(|w| w[0].sus >= w[1].sus));
    }
}
