mod common;

use common::{worked_example_ir, oracle_extract, oracle_roots, random_graph_ir, random_ir};
use malseq_core::dex::{DexProgram, IrDocument};
use malseq_core::extract::{
    build_cross_reference, extract_sequence, find_root_methods, write_records, BehaviorSequence,
    ExtractionConfig, SequenceRecord,
};
use proptest::prelude::*;

fn extract(doc: &IrDocument) -> (DexProgram, BehaviorSequence) {
    let program = doc.to_program("t").unwrap();
    let graph = build_cross_reference(&program);
    let (seq, _) = extract_sequence(&program, &graph, &ExtractionConfig::default());
    (program, seq)
}

fn as_tuples(program: &DexProgram, seq: &BehaviorSequence) -> Vec<(String, String, String, u32)> {
    seq.apis
        .iter()
        .zip(&seq.provenance)
        .map(|(api, p)| {
            (
                api.to_string(),
                program.method_signature(p.direct_invoker),
                program.method_signature(p.root),
                p.instruction_offset,
            )
        })
        .collect()
}

#[test]
fn worked_example_emission_order() {
    let (doc, expected) = worked_example_ir();
    let (program, seq) = extract(&doc);
    let got: Vec<&str> = seq.apis.iter().map(|a| &**a).collect();
    assert_eq!(got, expected);
    let root = program.method_by_signature("Lb;->a()V").unwrap();
    assert!(seq.provenance.iter().all(|p| p.root == root));
    let helper = program.method_by_signature("Ld;->d()V").unwrap();
    assert_eq!(seq.provenance[4].direct_invoker, helper);
    assert_eq!(seq.provenance[5].direct_invoker, helper);
}

#[test]
fn two_roots_partition_the_sequence() {
    let doc = IrDocument::parse(
        r#"{"methods":[
        {"class":"Lz;","name":"onStart","proto":"()V","invokes":["Lh;->h()V","Landroid/a/A;->z()V"]},
        {"class":"La;","name":"onCreate","proto":"()V","invokes":["Landroid/a/A;->a()V","Lh;->h()V"]},
        {"class":"Lh;","name":"h","proto":"()V","invokes":["Landroid/a/A;->h()V"]}]}"#,
    )
    .unwrap();
    let (program, seq) = extract(&doc);
    let got: Vec<&str> = seq.apis.iter().map(|a| &**a).collect();
    assert_eq!(
        got,
        vec![
            "Landroid/a/A;->a()V",
            "Landroid/a/A;->h()V",
            "Landroid/a/A;->h()V",
            "Landroid/a/A;->z()V"
        ]
    );
    assert_eq!(seq.subsequences.len(), 2);
    assert_eq!(seq.subsequences[0].root, program.method_by_signature("La;->onCreate()V").unwrap());
    assert_eq!((seq.subsequences[0].start, seq.subsequences[0].end), (0, 2));
    assert_eq!((seq.subsequences[1].start, seq.subsequences[1].end), (2, 4));
}

#[test]
fn stats_report_fan_out_and_depth() {
    let (doc, _) = worked_example_ir();
    let program = doc.to_program("fig2").unwrap();
    let graph = build_cross_reference(&program);
    let (_, stats) = extract_sequence(&program, &graph, &ExtractionConfig::default());
    assert_eq!(stats.n, 3);
    // two internal call sites over three methods
    assert!((stats.n_avg - 2.0 / 3.0).abs() < 1e-12);
    // depths: API1-4 at 1, API5,6,9 at 2, API7,8 at 3
    assert!((stats.d - (4.0 + 6.0 + 6.0) / 9.0).abs() < 1e-12);
    assert_eq!(stats.max_depth, 3);
    assert_eq!(stats.emitted_len, 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn memoized_extraction_matches_oracle(seed in any::<u64>()) {
        let doc = random_ir(seed, 30, 8);
        let (program, seq) = extract(&doc);
        prop_assert_eq!(as_tuples(&program, &seq), oracle_extract(&doc));
    }

    #[test]
    fn roots_match_brute_force(seed in any::<u64>()) {
        let doc = random_graph_ir(seed, 25);
        let program = doc.to_program("g").unwrap();
        let graph = build_cross_reference(&program);
        let roots: Vec<String> = find_root_methods(&graph)
            .into_iter()
            .map(|m| program.method_signature(m))
            .collect();
        prop_assert_eq!(roots, oracle_roots(&doc));
    }

    #[test]
    fn provenance_points_at_real_invokes(seed in any::<u64>()) {
        let doc = random_ir(seed, 20, 6);
        let (program, seq) = extract(&doc);
        prop_assert_eq!(seq.apis.len(), seq.provenance.len());
        for (api, p) in seq.apis.iter().zip(&seq.provenance) {
            let m = program.method(p.direct_invoker);
            let hit = m.invokes().any(|(insn, t)| {
                insn.offset == p.instruction_offset && program.method_ref(t).signature() == **api
            });
            prop_assert!(hit);
        }
        // spans partition [0, len) in order
        let mut at = 0;
        for s in &seq.subsequences {
            prop_assert_eq!(s.start, at);
            at = s.end;
        }
        prop_assert_eq!(at, seq.len());
    }

    #[test]
    fn extraction_is_deterministic(seed in any::<u64>()) {
        let doc = random_ir(seed, 20, 6);
        let text = doc.to_json();
        let dump = |d: &IrDocument| {
            let (program, seq) = extract(d);
            let rec = SequenceRecord::new("x", None, &program, &seq);
            let mut buf = Vec::new();
            write_records(&mut buf, &[rec]).unwrap();
            buf
        };
        let first = dump(&doc);
        let second = dump(&IrDocument::parse(&text).unwrap());
        prop_assert_eq!(first, second);
    }

    #[test]
    fn truncation_is_a_prefix(seed in any::<u64>(), cap in 0usize..40) {
        let doc = random_ir(seed, 20, 6);
        let program = doc.to_program("t").unwrap();
        let graph = build_cross_reference(&program);
        let (full, _) = extract_sequence(&program, &graph, &ExtractionConfig::default());
        let config = ExtractionConfig { max_len: cap, ..Default::default() };
        let (cut, _) = extract_sequence(&program, &graph, &config);
        prop_assert_eq!(cut.len(), full.len().min(cap));
        prop_assert_eq!(&cut.apis[..], &full.apis[..cut.len()]);
        prop_assert_eq!(&cut.provenance[..], &full.provenance[..cut.len()]);
        prop_assert_eq!(cut.truncated, full.len() > cap);
    }
}
