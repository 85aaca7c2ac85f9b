//! JSON intermediate representation of a program.
//!
//! ```json
//! {"methods": [{"class": "La;", "name": "a", "proto": "()V",
//!               "invokes": ["Lb;->b()V", "Landroid/app/Activity;-><init>()V"]}],
//!  "label": "malicious"}
//! ```
//!
//! Only invoke lists are represented. Each invoke becomes an
//! `invoke-virtual` instruction three code units wide, so offsets are
//! `0, 3, 6, ...` in list order. An invoke naming a class that the document
//! itself defines must name one of that class's defined methods.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::sig::parse_signature;
use super::{
    ClassDef, DexProgram, Instruction, IrError, MethodId, ProgramBuilder, ProgramSource, Prototype,
};
use crate::Label;

const IR_INVOKE_OPCODE: u8 = 0x6e;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrMethod {
    pub class: String,
    pub name: String,
    pub proto: String,
    #[serde(default)]
    pub invokes: Vec<String>,
}

impl IrMethod {
    pub fn signature(&self) -> String {
        format!("{}->{}{}", self.class, self.name, self.proto)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrDocument {
    pub methods: Vec<IrMethod>,
    #[serde(default)]
    pub label: Option<Label>,
}

impl IrDocument {
    pub fn parse(text: &str) -> Result<IrDocument, IrError> {
        serde_json::from_str(text).map_err(|e| IrError::SchemaViolation(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("IR serializes")
    }

    /// Build the program this document describes.
    pub fn to_program(&self, name: &str) -> Result<DexProgram, IrError> {
        let mut builder = ProgramBuilder::new(name, ProgramSource::TextIr);
        let mut internal_classes = BTreeSet::new();
        let mut defs = Vec::with_capacity(self.methods.len());
        for m in &self.methods {
            let proto = Prototype::parse(&m.proto).ok_or_else(|| {
                IrError::SchemaViolation(format!("bad prototype {:?} on {}", m.proto, m.signature()))
            })?;
            let sig = m.signature();
            if parse_signature(&sig).is_none() {
                return Err(IrError::SchemaViolation(format!("bad method signature {sig:?}")));
            }
            let r = builder.intern_ref(&m.class, &m.name, proto);
            if defs.contains(&r) {
                return Err(IrError::DuplicateMethodSignature(sig));
            }
            defs.push(r);
            internal_classes.insert(m.class.as_str());
        }
        let defined: BTreeSet<String> = self.methods.iter().map(IrMethod::signature).collect();

        let mut classes: Vec<ClassDef> = Vec::new();
        let mut class_index: HashMap<&str, usize> = HashMap::new();
        for (m, r) in self.methods.iter().zip(defs) {
            let mut instructions = Vec::with_capacity(m.invokes.len());
            for (k, inv) in m.invokes.iter().enumerate() {
                let (class, name, proto) = parse_signature(inv).ok_or_else(|| {
                    IrError::SchemaViolation(format!("bad invoke signature {inv:?} in {}", m.signature()))
                })?;
                if internal_classes.contains(class.as_str()) && !defined.contains(inv) {
                    return Err(IrError::UnresolvedReference(inv.clone()));
                }
                let target = builder.intern_ref(&class, &name, proto);
                instructions.push(Instruction {
                    offset: 3 * k as u32,
                    opcode: IR_INVOKE_OPCODE,
                    units: vec![u16::from(IR_INVOKE_OPCODE), target.0 as u16, 0],
                    invoke_target: Some(target),
                });
            }
            let code_units = 3 * instructions.len() as u32;
            let id = builder
                .define_method(r, 0x1, 0, code_units, instructions)
                .expect("duplicates rejected above");
            let ci = *class_index.entry(m.class.as_str()).or_insert_with(|| {
                classes.push(ClassDef {
                    descriptor: m.class.clone(),
                    superclass: None,
                    access_flags: 0x1,
                    methods: Vec::new(),
                });
                classes.len() - 1
            });
            classes[ci].methods.push(id);
        }
        for c in classes {
            builder.add_class(c);
        }
        Ok(builder.finish())
    }

    /// Project a program onto the IR: internal methods with their invoke
    /// targets in instruction order.
    pub fn from_program(program: &DexProgram, label: Option<Label>) -> IrDocument {
        let methods = program
            .method_ids()
            .map(|id: MethodId| {
                let info = program.method_info(id);
                IrMethod {
                    class: info.class_descriptor.clone(),
                    name: info.name.clone(),
                    proto: info.prototype.to_string(),
                    invokes: program
                        .method(id)
                        .invokes()
                        .map(|(_, t)| program.method_ref(t).signature())
                        .collect(),
                }
            })
            .collect();
        IrDocument { methods, label }
    }
}

/// Parse an IR document into a program.
pub fn load_ir(text: &str) -> Result<DexProgram, IrError> {
    IrDocument::parse(text)?.to_program("")
}
