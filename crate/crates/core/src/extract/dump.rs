//! Line-delimited JSON persistence of extracted sequences.
//!
//! One object per line:
//!
//! ```json
//! {"id":"sample-0001","label":"malicious",
//!  "apis":["Landroid/telephony/SmsManager;->getDefault()Landroid/telephony/SmsManager;"],
//!  "provenance":[["Lcom/a/B;->run()V","Lcom/a/Main;->onCreate()V",12]],
//!  "truncated":false}
//! ```
//!
//! `provenance[i]` is `[direct invoker, root, instruction offset]` for
//! `apis[i]`; `label` is `"malicious"`, `"benign"` or `null`.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::BehaviorSequence;
use crate::dex::DexProgram;
use crate::Label;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub label: Option<Label>,
    pub apis: Vec<String>,
    pub provenance: Vec<(String, String, u32)>,
    pub truncated: bool,
}

impl SequenceRecord {
    pub fn new(id: &str, label: Option<Label>, program: &DexProgram, seq: &BehaviorSequence) -> Self {
        SequenceRecord {
            id: id.to_string(),
            label,
            apis: seq.apis.iter().map(|a| a.to_string()).collect(),
            provenance: seq
                .provenance
                .iter()
                .map(|p| {
                    (
                        program.method_signature(p.direct_invoker),
                        program.method_signature(p.root),
                        p.instruction_offset,
                    )
                })
                .collect(),
            truncated: seq.truncated,
        }
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[SequenceRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> io::Result<Vec<SequenceRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}
