//! From attention weights to suspicious methods.
//!
//! The `k` positions with the largest attention weight are the k-suspect
//! APIs. Each is charged to the method whose invoke instruction produced it
//! (the direct invoker in the provenance map), and a method's suspect score
//! is the sum of the weights charged to it. Scores are only comparable
//! within one program.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::dex::{DexProgram, MethodId};
use crate::extract::BehaviorSequence;
use crate::nn::AttentionTrace;

pub use report::{generate_report, render_text, Report, ReportMeta};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LocalizeError {
    #[error("trace and sequence disagree: {0}")]
    ProvenanceMismatch(String),
    #[error("no programs given")]
    EmptySet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuspectApi {
    /// Index in the extracted behavior sequence.
    pub position: usize,
    pub api: Arc<str>,
    pub alpha: f64,
    pub direct_invoker: MethodId,
    pub root: MethodId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSuspicion {
    pub method: MethodId,
    pub sus: f64,
    /// Sequence positions of the suspects charged to this method, in
    /// suspect order.
    pub contributing: Vec<usize>,
    /// Distinct roots whose expansion produced the contributing positions.
    pub entry_points: Vec<MethodId>,
}

/// The `k` valid positions with the largest attention weight, heaviest
/// first, equal weights in position order.
///
/// `positions[i]` is the sequence index of classifier row `i`, as produced
/// by vectorization.
pub fn top_k_suspects(
    trace: &AttentionTrace,
    positions: &[usize],
    seq: &BehaviorSequence,
    k: usize,
) -> Result<Vec<SuspectApi>, LocalizeError> {
    if positions.len() != trace.valid_len {
        return Err(LocalizeError::ProvenanceMismatch(format!(
            "{} positions for {} valid rows",
            positions.len(),
            trace.valid_len
        )));
    }
    if seq.apis.len() != seq.provenance.len() {
        return Err(LocalizeError::ProvenanceMismatch(format!(
            "{} APIs but {} provenance entries",
            seq.apis.len(),
            seq.provenance.len()
        )));
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= seq.len()) {
        return Err(LocalizeError::ProvenanceMismatch(format!(
            "position {p} beyond sequence of length {}",
            seq.len()
        )));
    }
    let mut rows: Vec<usize> = (0..trace.valid_len).collect();
    rows.sort_by(|&a, &b| {
        trace.alpha[b]
            .total_cmp(&trace.alpha[a])
            .then(positions[a].cmp(&positions[b]))
    });
    rows.truncate(k);
    Ok(rows
        .into_iter()
        .map(|r| {
            let pos = positions[r];
            let prov = seq.provenance[pos];
            SuspectApi {
                position: pos,
                api: seq.apis[pos].clone(),
                alpha: trace.alpha[r],
                direct_invoker: prov.direct_invoker,
                root: prov.root,
            }
        })
        .collect())
}

/// Group suspects by direct invoker; one entry per method, ordered by
/// method id.
pub fn suspect_scores(suspects: &[SuspectApi]) -> Vec<MethodSuspicion> {
    let mut by_method: BTreeMap<MethodId, (f64, Vec<usize>, BTreeSet<MethodId>)> = BTreeMap::new();
    for s in suspects {
        let e = by_method.entry(s.direct_invoker).or_default();
        e.0 += s.alpha;
        e.1.push(s.position);
        e.2.insert(s.root);
    }
    by_method
        .into_iter()
        .map(|(method, (sus, contributing, roots))| MethodSuspicion {
            method,
            sus,
            contributing,
            entry_points: roots.into_iter().collect(),
        })
        .collect()
}

/// Top `n` by descending score, equal scores in signature order.
pub fn select_methods(
    scores: &[MethodSuspicion],
    n: usize,
    program: &DexProgram,
) -> Vec<MethodSuspicion> {
    let mut ranked: Vec<(String, &MethodSuspicion)> = scores
        .iter()
        .map(|m| (program.method_signature(m.method), m))
        .collect();
    ranked.sort_by(|(sa, a), (sb, b)| b.sus.total_cmp(&a.sus).then_with(|| sa.cmp(sb)));
    ranked.into_iter().take(n).map(|(_, m)| m.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NMaxApi {
    pub api: String,
    /// Fraction of programs whose suspect set contains the API.
    pub suspected_rate: f64,
    /// Mean weight over all suspect occurrences of the API.
    pub average_weight: f64,
}

/// The `n` APIs most often among the k-suspects, given each program's
/// suspect list. Ties on rate go to the larger average weight, then to the
/// signature.
pub fn n_max_apis(suspect_sets: &[Vec<SuspectApi>], n: usize) -> Result<Vec<NMaxApi>, LocalizeError> {
    if suspect_sets.is_empty() {
        return Err(LocalizeError::EmptySet);
    }
    // api -> (programs, occurrences, weight sum)
    let mut acc: BTreeMap<&str, (usize, usize, f64)> = BTreeMap::new();
    for set in suspect_sets {
        let mut seen = BTreeSet::new();
        for s in set {
            let e = acc.entry(&s.api).or_default();
            if seen.insert(&*s.api) {
                e.0 += 1;
            }
            e.1 += 1;
            e.2 += s.alpha;
        }
    }
    let total = suspect_sets.len() as f64;
    let mut out: Vec<NMaxApi> = acc
        .into_iter()
        .map(|(api, (progs, occ, w))| NMaxApi {
            api: api.to_string(),
            suspected_rate: progs as f64 / total,
            average_weight: w / occ as f64,
        })
        .collect();
    out.sort_by(|a, b| {
        b.suspected_rate
            .total_cmp(&a.suspected_rate)
            .then(b.average_weight.total_cmp(&a.average_weight))
            .then_with(|| a.api.cmp(&b.api))
    });
    out.truncate(n);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::Provenance;

    fn sus(pos: usize, alpha: f64, m: u32, root: u32) -> SuspectApi {
        SuspectApi {
            position: pos,
            api: Arc::from(format!("Landroid/A;->a{pos}()V")),
            alpha,
            direct_invoker: MethodId(m),
            root: MethodId(root),
        }
    }

    fn trace(alpha: Vec<f64>, valid: usize) -> AttentionTrace {
        AttentionTrace {
            alpha,
            valid_len: valid,
            h: vec![],
            s: vec![],
            s_prime: vec![],
            p: [0.5, 0.5],
        }
    }

    fn seq(n: usize) -> BehaviorSequence {
        BehaviorSequence {
            apis: (0..n).map(|i| Arc::from(format!("Landroid/A;->a{i}()V"))).collect(),
            provenance: (0..n)
                .map(|i| Provenance {
                    direct_invoker: MethodId(i as u32 % 3),
                    root: MethodId(0),
                    instruction_offset: 0,
                })
                .collect(),
            subsequences: vec![],
            truncated: false,
        }
    }

    #[test]
    fn ties_on_the_boundary_prefer_earlier_positions() {
        let alpha = vec![0.05, 0.1, 0.05, 0.1, 0.2, 0.05, 0.05, 0.05, 0.15, 0.2];
        let t = trace(alpha, 10);
        let positions: Vec<usize> = (0..10).collect();
        let s = top_k_suspects(&t, &positions, &seq(10), 5).unwrap();
        let got: Vec<usize> = s.iter().map(|x| x.position).collect();
        assert_eq!(got, vec![4, 9, 8, 1, 3]);
        // crafted: positions 4 and 9 equal, k cuts between them
        let t = trace(vec![0.1, 0.1, 0.1, 0.1, 0.3, 0.0, 0.0, 0.0, 0.0, 0.3], 10);
        let s = top_k_suspects(&t, &positions, &seq(10), 1).unwrap();
        assert_eq!(s[0].position, 4);
    }

    #[test]
    fn fewer_valid_than_k() {
        let t = trace(vec![0.2, 0.3, 0.5, 0.0], 3);
        let s = top_k_suspects(&t, &[0, 2, 3], &seq(4), 10).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].position, 3);
    }

    #[test]
    fn mismatch_detected() {
        let t = trace(vec![0.5, 0.5], 2);
        assert!(top_k_suspects(&t, &[0], &seq(4), 2).is_err());
        assert!(top_k_suspects(&t, &[0, 9], &seq(4), 2).is_err());
    }

    #[test]
    fn grouping_sums_weights() {
        let scores = suspect_scores(&[sus(1, 0.5, 7, 0), sus(7, 0.3, 7, 1)]);
        assert_eq!(scores.len(), 1);
        assert!((scores[0].sus - 0.8).abs() < 1e-15);
        assert_eq!(scores[0].contributing, vec![1, 7]);
        assert_eq!(scores[0].entry_points, vec![MethodId(0), MethodId(1)]);
        let scores = suspect_scores(&[sus(1, 0.5, 7, 0), sus(2, 0.3, 8, 0)]);
        assert_eq!(scores.len(), 2);
    }

    #[test]
    fn n_max_rates() {
        let sets = vec![
            vec![sus(1, 0.4, 0, 0), sus(2, 0.2, 0, 0)],
            vec![sus(1, 0.2, 0, 0)],
            vec![sus(3, 0.9, 0, 0)],
            vec![],
        ];
        let top = n_max_apis(&sets, 2).unwrap();
        assert_eq!(top[0].api, "Landroid/A;->a1()V");
        assert_eq!(top[0].suspected_rate, 0.5);
        assert!((top[0].average_weight - 0.3).abs() < 1e-15);
        assert_eq!(top[1].api, "Landroid/A;->a3()V");
        assert_eq!(n_max_apis(&[], 3), Err(LocalizeError::EmptySet));
    }
}
