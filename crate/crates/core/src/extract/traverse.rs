use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::callgraph::CallGraph;
use crate::dex::{DexProgram, MethodId, RefId, RefKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Maximum number of emitted APIs; longer sequences are cut and flagged.
    pub max_len: usize,
    /// Largest flattened subsequence kept in the per-method memo.
    pub memo_cap: usize,
    /// Upper bound on visited invoke instructions, guarding against
    /// exponential expansion inside large cyclic components.
    pub max_steps: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            max_len: 200_000,
            memo_cap: 50_000,
            max_steps: 50_000_000,
        }
    }
}

/// Where an emitted API came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Internal method whose invoke instruction targets the API.
    pub direct_invoker: MethodId,
    /// Root method whose expansion produced the position.
    pub root: MethodId,
    /// Code-unit offset of the invoke instruction inside `direct_invoker`.
    pub instruction_offset: u32,
}

/// Span `[start, end)` of the sequence produced by one root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsequence {
    pub root: MethodId,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BehaviorSequence {
    pub apis: Vec<Arc<str>>,
    pub provenance: Vec<Provenance>,
    pub subsequences: Vec<Subsequence>,
    pub truncated: bool,
}

impl BehaviorSequence {
    pub fn len(&self) -> usize {
        self.apis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apis.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraversalStats {
    /// Internal method count.
    pub n: usize,
    /// Mean number of internal call sites per internal method.
    pub n_avg: f64,
    /// Mean invocation depth over all emitted positions (roots are depth 1).
    pub d: f64,
    pub max_depth: u32,
    pub roots: usize,
    pub memo_hits: u64,
    pub steps: u64,
    pub emitted_len: usize,
}

#[derive(Debug, Clone, Copy)]
struct Emission {
    api: RefId,
    invoker: MethodId,
    offset: u32,
    depth: u32,
}

struct Frame {
    method: MethodId,
    next: usize,
    start: usize,
    depth: u32,
}

/// Flatten every root's invocation tree into one API sequence.
///
/// Each root is expanded depth-first in instruction order: an API invoke
/// emits the API, an internal invoke descends into the callee, anything else
/// is skipped. An invoke of a method already on the current DFS stack is
/// skipped. Expansions of methods outside non-trivial strongly connected
/// components do not depend on the DFS stack, so they are memoized and
/// replayed on later call sites.
pub fn extract_sequence(
    program: &DexProgram,
    graph: &CallGraph,
    config: &ExtractionConfig,
) -> (BehaviorSequence, TraversalStats) {
    let n = program.methods.len();
    let scc = graph.scc_ids();
    let mut scc_size = vec![0usize; n];
    for &c in &scc {
        scc_size[c] += 1;
    }
    let memoizable: Vec<bool> = scc.iter().map(|&c| scc_size[c] == 1).collect();

    let mut memo: Vec<Option<Vec<Emission>>> = vec![None; n];
    let mut on_stack = vec![false; n];
    let mut out: Vec<Emission> = Vec::new();
    let mut subsequences = Vec::with_capacity(graph.roots().len());
    let mut root_of: Vec<MethodId> = Vec::new();
    let mut truncated = false;
    let mut memo_hits = 0u64;
    let mut steps = 0u64;

    'roots: for &root in graph.roots() {
        let start = out.len();
        let mut stack = vec![Frame {
            method: root,
            next: 0,
            start,
            depth: 1,
        }];
        on_stack[root.index()] = true;
        while let Some(frame) = stack.last_mut() {
            let insns = &program.method(frame.method).instructions;
            let Some(insn) = insns.get(frame.next) else {
                let done = stack.pop().expect("non-empty");
                on_stack[done.method.index()] = false;
                let len = out.len() - done.start;
                if done.depth > 1 && memoizable[done.method.index()] && len <= config.memo_cap {
                    memo[done.method.index()] = Some(
                        out[done.start..]
                            .iter()
                            .map(|e| Emission {
                                depth: e.depth - done.depth,
                                ..*e
                            })
                            .collect(),
                    );
                }
                continue;
            };
            frame.next += 1;
            let Some(target) = insn.invoke_target else {
                continue;
            };
            steps += 1;
            if steps > config.max_steps {
                truncated = true;
            }
            if truncated {
                break;
            }
            match program.method_ref(target).kind {
                RefKind::ExternalApi => {
                    if out.len() >= config.max_len {
                        truncated = true;
                        break;
                    }
                    out.push(Emission {
                        api: target,
                        invoker: frame.method,
                        offset: insn.offset,
                        depth: frame.depth,
                    });
                }
                RefKind::ExternalIgnored => {}
                RefKind::Internal => {
                    let callee = program.internal_target(target).expect("internal ref");
                    if on_stack[callee.index()] {
                        continue;
                    }
                    let depth = frame.depth + 1;
                    if let Some(cached) = &memo[callee.index()] {
                        memo_hits += 1;
                        let room = config.max_len - out.len();
                        let take = cached.len().min(room);
                        out.extend(cached[..take].iter().map(|e| Emission {
                            depth: e.depth + depth,
                            ..*e
                        }));
                        if take < cached.len() {
                            truncated = true;
                            break;
                        }
                        continue;
                    }
                    on_stack[callee.index()] = true;
                    stack.push(Frame {
                        method: callee,
                        next: 0,
                        start: out.len(),
                        depth,
                    });
                }
            }
        }
        for f in stack.drain(..) {
            on_stack[f.method.index()] = false;
        }
        root_of.resize(out.len(), root);
        subsequences.push(Subsequence {
            root,
            start,
            end: out.len(),
        });
        if truncated {
            break 'roots;
        }
    }

    let call_sites: usize = program
        .method_ids()
        .map(|m| graph.out_degree(m))
        .sum();
    let depth_sum: u64 = out.iter().map(|e| u64::from(e.depth)).sum();
    let stats = TraversalStats {
        n,
        n_avg: if n == 0 { 0.0 } else { call_sites as f64 / n as f64 },
        d: if !out.is_empty() {
            depth_sum as f64 / out.len() as f64
        } else if graph.roots().is_empty() {
            0.0
        } else {
            1.0
        },
        max_depth: out.iter().map(|e| e.depth).max().unwrap_or(0),
        roots: graph.roots().len(),
        memo_hits,
        steps,
        emitted_len: out.len(),
    };

    let mut names: Vec<Option<Arc<str>>> = vec![None; program.method_refs.len()];
    let apis = out
        .iter()
        .map(|e| {
            names[e.api.index()]
                .get_or_insert_with(|| Arc::from(program.method_ref(e.api).signature()))
                .clone()
        })
        .collect();
    let provenance = out
        .iter()
        .zip(&root_of)
        .map(|(e, &root)| Provenance {
            direct_invoker: e.invoker,
            root,
            instruction_offset: e.offset,
        })
        .collect();
    (
        BehaviorSequence {
            apis,
            provenance,
            subsequences,
            truncated,
        },
        stats,
    )
}
