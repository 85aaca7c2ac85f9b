use std::collections::BTreeSet;

use crate::dex::{DexProgram, MethodId};

/// Cross-reference over internal methods.
///
/// `r_from` keeps call sites in instruction order (with multiplicity);
/// `r_to` keeps distinct callers. Invokes of external references create no
/// edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallGraph {
    r_from: Vec<Vec<MethodId>>,
    r_to: Vec<BTreeSet<MethodId>>,
    /// Position of each method in `(class, name, proto)` order.
    signature_rank: Vec<u32>,
    roots: Vec<MethodId>,
}

impl CallGraph {
    /// Internal methods directly invoked by `m`, one entry per call site.
    pub fn r_from(&self, m: MethodId) -> &[MethodId] {
        &self.r_from[m.index()]
    }

    /// Distinct internal methods that directly invoke `m`.
    pub fn r_to(&self, m: MethodId) -> &BTreeSet<MethodId> {
        &self.r_to[m.index()]
    }

    pub fn in_degree(&self, m: MethodId) -> usize {
        self.r_to[m.index()].len()
    }

    /// Out-degree counted per call site.
    pub fn out_degree(&self, m: MethodId) -> usize {
        self.r_from[m.index()].len()
    }

    /// Out-degree counted per distinct callee.
    pub fn distinct_callees(&self, m: MethodId) -> usize {
        self.r_from[m.index()].iter().collect::<BTreeSet<_>>().len()
    }

    pub fn method_count(&self) -> usize {
        self.r_from.len()
    }

    /// Root methods in signature order.
    pub fn roots(&self) -> &[MethodId] {
        &self.roots
    }

    /// Strongly connected component id of every method (Tarjan). Two
    /// methods share an id iff each reaches the other.
    pub(crate) fn scc_ids(&self) -> Vec<usize> {
        let n = self.r_from.len();
        let mut index = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut on_stack = vec![false; n];
        let mut stack = Vec::new();
        let mut comp = vec![usize::MAX; n];
        let mut next_index = 0;
        let mut next_comp = 0;
        // explicit call stack of (node, next edge position)
        let mut work: Vec<(usize, usize)> = Vec::new();
        for start in 0..n {
            if index[start] != usize::MAX {
                continue;
            }
            work.push((start, 0));
            while let Some(&mut (v, ref mut edge)) = work.last_mut() {
                if *edge == 0 && index[v] == usize::MAX {
                    index[v] = next_index;
                    low[v] = next_index;
                    next_index += 1;
                    stack.push(v);
                    on_stack[v] = true;
                }
                if let Some(&w) = self.r_from[v].get(*edge) {
                    *edge += 1;
                    let w = w.index();
                    if index[w] == usize::MAX {
                        work.push((w, 0));
                    } else if on_stack[w] {
                        low[v] = low[v].min(index[w]);
                    }
                    continue;
                }
                work.pop();
                if let Some(&(parent, _)) = work.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
            }
        }
        comp
    }
}

/// Build the cross-reference sets of every internal method.
pub fn build_cross_reference(program: &DexProgram) -> CallGraph {
    let n = program.methods.len();
    let mut r_from = vec![Vec::new(); n];
    let mut r_to = vec![BTreeSet::new(); n];
    for m in program.method_ids() {
        for (_, target) in program.method(m).invokes() {
            if let Some(callee) = program.internal_target(target) {
                r_from[m.index()].push(callee);
                r_to[callee.index()].insert(m);
            }
        }
    }
    let mut order: Vec<MethodId> = program.method_ids().collect();
    order.sort_by_cached_key(|m| {
        let info = program.method_info(*m);
        (
            info.class_descriptor.clone(),
            info.name.clone(),
            info.prototype.to_string(),
        )
    });
    let mut signature_rank = vec![0u32; n];
    for (rank, m) in order.iter().enumerate() {
        signature_rank[m.index()] = rank as u32;
    }
    let mut graph = CallGraph {
        r_from,
        r_to,
        signature_rank,
        roots: Vec::new(),
    };
    graph.roots = find_root_methods(&graph);
    graph
}

/// Methods never invoked by another internal method that invoke at least
/// one, ordered by `(class, name, proto)`.
pub fn find_root_methods(graph: &CallGraph) -> Vec<MethodId> {
    let mut roots: Vec<MethodId> = (0..graph.method_count() as u32)
        .map(MethodId)
        .filter(|&m| graph.in_degree(m) == 0 && graph.distinct_callees(m) != 0)
        .collect();
    roots.sort_by_key(|m| graph.signature_rank[m.index()]);
    roots
}
