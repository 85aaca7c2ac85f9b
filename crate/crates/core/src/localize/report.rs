use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{MethodSuspicion, SuspectApi};
use crate::dex::{DexProgram, ProgramSource};
use crate::extract::BehaviorSequence;
use crate::nn::AttentionTrace;

/// Caller-supplied facts about the scanned file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub file_name: String,
    pub file_size: Option<u64>,
    pub sha256: Option<String>,
    /// Declared permissions, if known from elsewhere; never derived from
    /// the bytecode.
    pub permissions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Brief {
    pub file_name: String,
    pub file_size: Option<u64>,
    pub sha256: Option<String>,
    pub source: String,
    pub classes: usize,
    pub methods: usize,
    pub sequence_length: usize,
    pub analyzed_length: usize,
    pub truncated: bool,
    pub p_malicious: f64,
    pub permissions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub rank: usize,
    pub position: usize,
    pub api: String,
    pub alpha: f64,
    pub invoker: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributingApi {
    pub position: usize,
    pub api: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDetail {
    pub rank: usize,
    pub method: String,
    pub parameters: Vec<String>,
    pub return_type: String,
    pub sus: f64,
    pub entry_points: Vec<String>,
    pub suspects: Vec<ContributingApi>,
    /// `offset: mnemonic target` per invoke instruction, in code order.
    pub invokes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub brief: Brief,
    pub summary: Vec<SummaryEntry>,
    pub details: Vec<MethodDetail>,
}

/// Assemble the three-part report for a program classified malicious.
pub fn generate_report(
    program: &DexProgram,
    seq: &BehaviorSequence,
    trace: &AttentionTrace,
    suspects: &[SuspectApi],
    methods: &[MethodSuspicion],
    meta: &ReportMeta,
) -> Report {
    let brief = Brief {
        file_name: meta.file_name.clone(),
        file_size: meta.file_size,
        sha256: meta.sha256.clone(),
        source: match program.source {
            ProgramSource::DexBinary => "dex",
            ProgramSource::TextIr => "ir",
        }
        .to_string(),
        classes: program.classes.len(),
        methods: program.methods.len(),
        sequence_length: seq.len(),
        analyzed_length: trace.valid_len,
        truncated: seq.truncated,
        p_malicious: trace.p[0],
        permissions: meta.permissions.clone(),
    };
    let summary = suspects
        .iter()
        .enumerate()
        .map(|(i, s)| SummaryEntry {
            rank: i + 1,
            position: s.position,
            api: s.api.to_string(),
            alpha: s.alpha,
            invoker: program.method_signature(s.direct_invoker),
        })
        .collect();
    let details = methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let info = program.method_info(m.method);
            let mut entry_points: Vec<String> =
                m.entry_points.iter().map(|&r| program.method_signature(r)).collect();
            entry_points.sort();
            let suspects = m
                .contributing
                .iter()
                .map(|&pos| {
                    let s = suspects
                        .iter()
                        .find(|s| s.position == pos)
                        .expect("contributing position is a suspect");
                    ContributingApi {
                        position: pos,
                        api: s.api.to_string(),
                        alpha: s.alpha,
                    }
                })
                .collect();
            let invokes = program
                .method(m.method)
                .invokes()
                .map(|(insn, t)| {
                    let range = insn.opcode >= 0x74;
                    let kind = insn.invoke_kind().expect("invoke opcode");
                    format!(
                        "{:04x}: {} {}",
                        insn.offset,
                        kind.mnemonic(range),
                        program.method_ref(t)
                    )
                })
                .collect();
            MethodDetail {
                rank: i + 1,
                method: info.signature(),
                parameters: info.prototype.params.clone(),
                return_type: info.prototype.ret.clone(),
                sus: m.sus,
                entry_points,
                suspects,
                invokes,
            }
        })
        .collect();
    Report {
        brief,
        summary,
        details,
    }
}

/// Plain-text rendering with the same three sections.
pub fn render_text(report: &Report) -> String {
    let b = &report.brief;
    let mut out = String::new();
    let _ = writeln!(out, "== Brief ==");
    let _ = writeln!(out, "file:        {}", b.file_name);
    if let Some(size) = b.file_size {
        let _ = writeln!(out, "size:        {size} bytes");
    }
    if let Some(h) = &b.sha256 {
        let _ = writeln!(out, "sha256:      {h}");
    }
    let _ = writeln!(out, "source:      {}", b.source);
    let _ = writeln!(out, "classes:     {}", b.classes);
    let _ = writeln!(out, "methods:     {}", b.methods);
    let _ = writeln!(
        out,
        "sequence:    {} APIs ({} analyzed{})",
        b.sequence_length,
        b.analyzed_length,
        if b.truncated { ", truncated" } else { "" }
    );
    let _ = writeln!(out, "malicious:   p = {:.6}", b.p_malicious);
    if !b.permissions.is_empty() {
        let _ = writeln!(out, "permissions: {}", b.permissions.join(", "));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "== Summary: {} suspect APIs ==", report.summary.len());
    for s in &report.summary {
        let _ = writeln!(
            out,
            "{:>4}  {:.6}  #{:<6} {}  <- {}",
            s.rank, s.alpha, s.position, s.api, s.invoker
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "== Details: {} methods ==", report.details.len());
    for d in &report.details {
        let _ = writeln!(out);
        let _ = writeln!(out, "[{}] {}  sus = {:.6}", d.rank, d.method, d.sus);
        let _ = writeln!(out, "    parameters:   ({})", d.parameters.join(", "));
        let _ = writeln!(out, "    returns:      {}", d.return_type);
        let _ = writeln!(out, "    entry points: {}", d.entry_points.join(", "));
        let _ = writeln!(out, "    suspect APIs:");
        for s in &d.suspects {
            let _ = writeln!(out, "      #{:<6} {:.6}  {}", s.position, s.alpha, s.api);
        }
        let _ = writeln!(out, "    invokes:");
        for line in &d.invokes {
            let _ = writeln!(out, "      {line}");
        }
    }
    out
}
