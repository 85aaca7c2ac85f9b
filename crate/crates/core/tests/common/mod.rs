//! Test-only oracles. Nothing here calls into the extraction code it checks:
//! the interpreter below works directly on the IR document with its own
//! prefix table and root computation.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use malseq_core::dex::{IrDocument, IrMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PREFIXES: [&str; 9] = [
    "Landroid/",
    "Lcom/android/internal/util/",
    "Ldalvik/",
    "Lorg/apache/",
    "Lorg/json/",
    "Lorg/w3c/dom/",
    "Lorg/xml/sax",
    "Lorg/xmlpull/v1/",
    "Ljunit/",
];

/// `(api, direct invoker, root, offset)` per emitted position.
pub type OracleEmission = (String, String, String, u32);

fn class_of(sig: &str) -> &str {
    sig.split("->").next().unwrap()
}

fn sort_key(m: &IrMethod) -> (String, String, String) {
    (m.class.clone(), m.name.clone(), m.proto.clone())
}

/// Brute-force roots: in-degree (distinct internal callers) zero and at
/// least one internal callee, sorted by (class, name, proto).
pub fn oracle_roots(doc: &IrDocument) -> Vec<String> {
    let defined: BTreeSet<String> = doc.methods.iter().map(|m| m.signature()).collect();
    let mut callers: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for m in &doc.methods {
        for inv in &m.invokes {
            if defined.contains(inv) {
                callers.entry(inv.clone()).or_default().insert(m.signature());
            }
        }
    }
    let mut roots: Vec<&IrMethod> = doc
        .methods
        .iter()
        .filter(|m| {
            let ind = callers.get(&m.signature()).map_or(0, |c| c.len());
            let outd = m.invokes.iter().filter(|i| defined.contains(*i)).count();
            ind == 0 && outd != 0
        })
        .collect();
    roots.sort_by_key(|m| sort_key(m));
    roots.iter().map(|m| m.signature()).collect()
}

/// Plain recursive interpreter, no memoization; an invoke of a method on
/// the current visit stack is skipped.
pub fn oracle_extract(doc: &IrDocument) -> Vec<OracleEmission> {
    let by_sig: BTreeMap<String, &IrMethod> =
        doc.methods.iter().map(|m| (m.signature(), m)).collect();
    let mut out = Vec::new();
    for root in oracle_roots(doc) {
        let mut stack = vec![root.clone()];
        visit(&by_sig, &root, &root, &mut stack, &mut out);
    }
    out
}

fn visit(
    by_sig: &BTreeMap<String, &IrMethod>,
    method: &str,
    root: &str,
    stack: &mut Vec<String>,
    out: &mut Vec<OracleEmission>,
) {
    let m = by_sig[method];
    for (k, inv) in m.invokes.iter().enumerate() {
        if by_sig.contains_key(inv) {
            if stack.iter().any(|s| s == inv) {
                continue;
            }
            stack.push(inv.clone());
            visit(by_sig, inv, root, stack, out);
            stack.pop();
        } else if PREFIXES.iter().any(|p| class_of(inv).starts_with(p)) {
            out.push((inv.clone(), method.to_string(), root.to_string(), 3 * k as u32));
        }
    }
}

/// Random IR program: up to `max_methods` methods with up to `max_invokes`
/// invokes each, mixing internal calls (cycles and self-calls included),
/// analyzed APIs and ignored externals.
pub fn random_ir(seed: u64, max_methods: usize, max_invokes: usize) -> IrDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(0..=max_methods);
    let classes = ["Lcom/a/A;", "Lcom/a/B;", "Lcom/b/C;"];
    let protos = ["()V", "(I)V", "()Z"];
    let names: Vec<(String, String, String)> = (0..n)
        .map(|i| {
            (
                classes[rng.random_range(0..classes.len())].to_string(),
                format!("m{i}"),
                protos[rng.random_range(0..protos.len())].to_string(),
            )
        })
        .collect();
    let apis = [
        "Landroid/telephony/SmsManager;->sendTextMessage()V",
        "Landroid/telephony/TelephonyManager;->getDeviceId()Ljava/lang/String;",
        "Landroid/util/Log;->d()I",
        "Lorg/json/JSONObject;-><init>()V",
        "Ldalvik/system/DexClassLoader;->loadClass()V",
    ];
    let ignored = ["Ljava/lang/String;->length()I", "Lcom/thirdparty/X;->y()V"];
    let methods = names
        .iter()
        .map(|(class, name, proto)| {
            let k = rng.random_range(0..=max_invokes);
            let invokes = (0..k)
                .map(|_| {
                    let r: f64 = rng.random();
                    if r < 0.45 && n > 0 {
                        let (c, m, p) = &names[rng.random_range(0..n)];
                        format!("{c}->{m}{p}")
                    } else if r < 0.9 {
                        apis[rng.random_range(0..apis.len())].to_string()
                    } else {
                        ignored[rng.random_range(0..ignored.len())].to_string()
                    }
                })
                .collect();
            IrMethod {
                class: class.clone(),
                name: name.clone(),
                proto: proto.clone(),
                invokes,
            }
        })
        .collect();
    IrDocument {
        methods,
        label: None,
    }
}

/// Random directed graph as IR: every method calls the listed callees only.
pub fn random_graph_ir(seed: u64, max_nodes: usize) -> IrDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_nodes);
    let density: f64 = rng.random_range(0.0..0.3);
    let methods = (0..n)
        .map(|i| {
            let invokes = (0..n)
                .filter(|_| rng.random::<f64>() < density)
                .map(|j| format!("Lg/N{j};->n{j}()V"))
                .collect();
            IrMethod {
                class: format!("Lg/N{i};"),
                name: format!("n{i}"),
                proto: "()V".into(),
                invokes,
            }
        })
        .collect();
    IrDocument {
        methods,
        label: None,
    }
}

/// The call shape of the worked extraction example: root `Lb;->a()V` emits
/// API1, API2, descends into a helper that emits API5, API6, descends into a
/// second helper emitting API7, API8, returns to emit API9, and the root
/// finishes with API3, API4.
pub fn worked_example_ir() -> (IrDocument, Vec<&'static str>) {
    let api = [
        "",
        "Landroid/app/Activity;->onCreate(Landroid/os/Bundle;)V",
        "Landroid/telephony/TelephonyManager;->getDeviceId()Ljava/lang/String;",
        "Landroid/telephony/SmsManager;->getDefault()Landroid/telephony/SmsManager;",
        "Landroid/telephony/SmsManager;->sendTextMessage(Ljava/lang/String;Ljava/lang/String;Ljava/lang/String;Landroid/app/PendingIntent;Landroid/app/PendingIntent;)V",
        "Landroid/content/Context;->getSystemService(Ljava/lang/String;)Ljava/lang/Object;",
        "Landroid/net/ConnectivityManager;->getActiveNetworkInfo()Landroid/net/NetworkInfo;",
        "Lorg/apache/http/impl/client/DefaultHttpClient;-><init>()V",
        "Lorg/apache/http/client/HttpClient;->execute(Lorg/apache/http/client/methods/HttpUriRequest;)Lorg/apache/http/HttpResponse;",
        "Landroid/util/Log;->i(Ljava/lang/String;Ljava/lang/String;)I",
    ];
    let m = |class: &str, name: &str, invokes: Vec<&str>| IrMethod {
        class: class.into(),
        name: name.into(),
        proto: "()V".into(),
        invokes: invokes.into_iter().map(String::from).collect(),
    };
    let doc = IrDocument {
        methods: vec![
            m(
                "Lb;",
                "a",
                vec![api[1], api[2], "Lc;->c()V", "Ljava/lang/StringBuilder;-><init>()V", api[3], api[4]],
            ),
            m("Lc;", "c", vec![api[5], api[6], "Ld;->d()V", api[9]]),
            m("Ld;", "d", vec![api[7], api[8]]),
        ],
        label: Some(malseq_core::Label::Malicious),
    };
    let expected = vec![api[1], api[2], api[5], api[6], api[7], api[8], api[9], api[3], api[4]];
    (doc, expected)
}

/// Sequences built from fixed API groups: every sequence is a random run
/// of groups, each group's members emitted back to back in shuffled order.
/// Returns the sequences and every within-group pair.
pub fn grouped_corpus(
    seed: u64,
    groups: usize,
    group_size: usize,
    sequences: usize,
) -> (Vec<Vec<String>>, Vec<(String, String)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members: Vec<Vec<String>> = (0..groups)
        .map(|g| {
            (0..group_size)
                .map(|k| format!("Landroid/g{g}/A{k};->a()V"))
                .collect()
        })
        .collect();
    let corpus = (0..sequences)
        .map(|_| {
            let n = rng.random_range(5..15);
            let mut seq = Vec::new();
            for _ in 0..n {
                let mut block = members[rng.random_range(0..groups)].clone();
                for i in (1..block.len()).rev() {
                    block.swap(i, rng.random_range(0..=i));
                }
                seq.extend(block);
            }
            seq
        })
        .collect();
    let pairs = members
        .iter()
        .flat_map(|m| {
            (0..m.len()).flat_map(move |a| (a + 1..m.len()).map(move |b| (m[a].clone(), m[b].clone())))
        })
        .collect();
    (corpus, pairs)
}

/// Mean cosine of the planted pairs minus mean cosine of all other pairs
/// of distinct APIs.
pub fn cosine_gap(
    emb: &malseq_core::embed::EmbeddingMatrix,
    vocab: &malseq_core::embed::ApiVocab,
    pairs: &[(String, String)],
) -> f64 {
    let planted: BTreeSet<(u32, u32)> = pairs
        .iter()
        .map(|(a, b)| {
            let (a, b) = (vocab.index_of(a).unwrap(), vocab.index_of(b).unwrap());
            (a.min(b), a.max(b))
        })
        .collect();
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for a in 0..vocab.len() as u32 {
        for b in a + 1..vocab.len() as u32 {
            let c = emb.cosine(a, b);
            if planted.contains(&(a, b)) {
                inside.push(c);
            } else {
                outside.push(c);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    mean(&inside) - mean(&outside)
}

/// Straight-line forward pass written from the model equations, sharing no
/// code with the library: returns `(alpha over valid positions, p)`.
pub fn oracle_forward(
    model: &malseq_core::nn::DetectionModel,
    x: &malseq_core::embed::PaddedVectorSequence,
) -> (Vec<f64>, [f64; 2]) {
    use malseq_core::nn::{Direction, ParamGroup};
    let (v, h) = (model.v(), model.hidden());
    let n = x.valid_len();
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let cell = |d: Direction, steps: Vec<usize>| {
        let wx = model.group(ParamGroup::InputWeights(d));
        let wh = model.group(ParamGroup::RecurrentWeights(d));
        let b = model.group(ParamGroup::GateBias(d));
        let mut hs = vec![vec![0.0; h]; n];
        let (mut hp, mut cp) = (vec![0.0; h], vec![0.0; h]);
        for t in steps {
            let xt = x.row(t);
            let gate = |block: usize, k: usize| {
                let r = block * h + k;
                let mut z = b[r];
                for j in 0..v {
                    z += wx[r * v + j] * xt[j];
                }
                for j in 0..h {
                    z += wh[r * h + j] * hp[j];
                }
                z
            };
            let mut hn = vec![0.0; h];
            let mut cn = vec![0.0; h];
            for k in 0..h {
                let i = sig(gate(0, k));
                let f = sig(gate(1, k));
                let o = sig(gate(2, k));
                let g = gate(3, k).tanh();
                cn[k] = f * cp[k] + i * g;
                hn[k] = o * cn[k].tanh();
            }
            hs[t] = hn.clone();
            hp = hn;
            cp = cn;
        }
        hs
    };
    let hf = cell(Direction::Forward, (0..n).collect());
    let hb = cell(Direction::Backward, (0..n).rev().collect());
    let hsum: Vec<Vec<f64>> = (0..n)
        .map(|t| (0..h).map(|k| hf[t][k] + hb[t][k]).collect())
        .collect();
    let ta = model.group(ParamGroup::AttentionContext);
    let scores: Vec<f64> = hsum
        .iter()
        .map(|ht| (0..h).map(|k| ta[k] * ht[k].tanh()).sum())
        .collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let alpha: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
    let s: Vec<f64> = (0..h)
        .map(|k| (0..n).map(|t| alpha[t] * hsum[t][k]).sum())
        .collect();
    let w = model.group(ParamGroup::HeadWeights);
    let bo = model.group(ParamGroup::HeadBias);
    let logit = |c: usize| bo[c] + (0..h).map(|k| w[c * h + k] * s[k].tanh()).sum::<f64>();
    let (a, b) = (logit(0).exp(), logit(1).exp());
    (alpha, [a / (a + b), b / (a + b)])
}

/// Random classifier input with `valid` non-zero rows.
pub fn random_input(
    rng: &mut ChaCha8Rng,
    len: usize,
    v: usize,
    valid: usize,
) -> malseq_core::embed::PaddedVectorSequence {
    let mut data = vec![0.0; len * v];
    for x in data[..valid * v].iter_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    malseq_core::embed::PaddedVectorSequence::from_rows(len, v, data, valid)
}

/// Token sequences over a 20-API pool; malicious ones contain the marker
/// token 0 somewhere, benign ones never do. Rows come from a fixed random
/// embedding of width `v`.
pub fn marker_dataset(
    seed: u64,
    count: usize,
    v: usize,
    len: usize,
) -> Vec<(malseq_core::embed::PaddedVectorSequence, malseq_core::Label)> {
    use malseq_core::Label;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..v).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    (0..count)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Malicious } else { Label::Benign };
            let n = rng.random_range(3..=len);
            let mut toks: Vec<usize> = (0..n).map(|_| rng.random_range(1..20)).collect();
            if label == Label::Malicious {
                let at = rng.random_range(0..n);
                toks[at] = 0;
            }
            let mut data = vec![0.0; len * v];
            for (t, &k) in toks.iter().enumerate() {
                data[t * v..(t + 1) * v].copy_from_slice(&table[k]);
            }
            (
                malseq_core::embed::PaddedVectorSequence::from_rows(len, v, data, n),
                label,
            )
        })
        .collect()
}
