//! Dalvik executable model.
//!
//! A [`DexProgram`] is produced either by [`parse_dex`] from a binary `.dex`
//! file or by [`load_ir`] from the JSON intermediate representation. Both
//! paths go through [`ProgramBuilder`], which interns method references,
//! enforces signature uniqueness and classifies every reference.

mod builder;
mod insn;
mod ir;
mod prefix;
mod reader;
mod sig;
mod writer;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builder::ProgramBuilder;
pub use insn::{code_unit_width, InvokeKind, INVOKE_OPCODES};
pub use ir::{load_ir, IrDocument, IrMethod};
pub use prefix::{classify_method_ref, is_api_descriptor, API_PREFIXES};
pub use reader::parse_dex;
pub use sig::{parse_type_list, Prototype};
pub use writer::assemble_dex;

/// Errors raised while decoding a binary DEX file.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DexError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated file: need {needed} bytes at offset {offset}, file has {len}")]
    TruncatedFile { offset: usize, needed: usize, len: usize },
    #[error("{what} index {index} out of range (limit {limit})")]
    BadIndex { what: &'static str, index: u64, limit: u64 },
    #[error("unsupported DEX version {0:?}")]
    UnsupportedVersion(String),
}

/// Errors raised while loading the textual IR.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IrError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("duplicate method signature {0}")]
    DuplicateMethodSignature(String),
    #[error("unresolved reference {0}: class is defined in this program but the method is not")]
    UnresolvedReference(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProgramSource {
    DexBinary,
    TextIr,
}

/// Classification of a method reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RefKind {
    /// Defined in this program.
    Internal,
    /// Undefined here and under one of the analyzed platform prefixes.
    ExternalApi,
    /// Undefined here and outside the analyzed prefixes (e.g. `java/`).
    ExternalIgnored,
}

/// Index of an internal method in [`DexProgram::methods`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MethodId(pub u32);

impl MethodId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Index into [`DexProgram::method_refs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RefId(pub u32);

impl RefId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MethodRef {
    pub class_descriptor: String,
    pub name: String,
    pub prototype: Prototype,
    pub kind: RefKind,
}

impl MethodRef {
    /// Smali-style full signature, `Lclass;->name(params)ret`.
    pub fn signature(&self) -> String {
        format!("{}->{}{}", self.class_descriptor, self.name, self.prototype)
    }

    /// Key used for deterministic ordering: (class, name, proto).
    pub fn sort_key(&self) -> (&str, &str, String) {
        (&self.class_descriptor, &self.name, self.prototype.to_string())
    }
}

impl fmt::Display for MethodRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}{}", self.class_descriptor, self.name, self.prototype)
    }
}

/// One decoded instruction. Non-invoke operands are kept as raw code units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    /// Offset in 16-bit code units from the start of the method's `insns`.
    pub offset: u32,
    pub opcode: u8,
    /// Raw code units, including the opcode unit and any payload.
    pub units: Vec<u16>,
    pub invoke_target: Option<RefId>,
}

impl Instruction {
    pub fn width(&self) -> u32 {
        self.units.len() as u32
    }

    pub fn invoke_kind(&self) -> Option<InvokeKind> {
        InvokeKind::from_opcode(self.opcode)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodDef {
    pub method_ref: RefId,
    pub access_flags: u32,
    pub registers: u16,
    /// Size of the code region in code units.
    pub code_units: u32,
    pub instructions: Vec<Instruction>,
}

impl MethodDef {
    /// Invoke instructions in offset order.
    pub fn invokes(&self) -> impl Iterator<Item = (&Instruction, RefId)> {
        self.instructions
            .iter()
            .filter_map(|insn| insn.invoke_target.map(|t| (insn, t)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDef {
    pub descriptor: String,
    pub superclass: Option<String>,
    pub access_flags: u32,
    pub methods: Vec<MethodId>,
}

/// A parsed program: classes, internal methods with their instructions and
/// every referenced method.
#[derive(Debug, Clone)]
pub struct DexProgram {
    pub name: String,
    pub source: ProgramSource,
    pub strings: Vec<String>,
    pub types: Vec<String>,
    pub classes: Vec<ClassDef>,
    pub methods: Vec<MethodDef>,
    pub method_refs: Vec<MethodRef>,
    ref_to_method: Vec<Option<MethodId>>,
    by_signature: HashMap<String, RefId>,
}

impl DexProgram {
    pub fn method_ref(&self, id: RefId) -> &MethodRef {
        &self.method_refs[id.index()]
    }

    pub fn method(&self, id: MethodId) -> &MethodDef {
        &self.methods[id.index()]
    }

    /// Reference describing an internal method.
    pub fn method_info(&self, id: MethodId) -> &MethodRef {
        self.method_ref(self.method(id).method_ref)
    }

    pub fn method_signature(&self, id: MethodId) -> String {
        self.method_info(id).signature()
    }

    /// The internal definition behind a reference, if any.
    pub fn internal_target(&self, id: RefId) -> Option<MethodId> {
        self.ref_to_method.get(id.index()).copied().flatten()
    }

    pub fn ref_by_signature(&self, signature: &str) -> Option<RefId> {
        self.by_signature.get(signature).copied()
    }

    pub fn method_by_signature(&self, signature: &str) -> Option<MethodId> {
        self.ref_by_signature(signature)
            .and_then(|r| self.internal_target(r))
    }

    pub fn method_ids(&self) -> impl Iterator<Item = MethodId> {
        (0..self.methods.len() as u32).map(MethodId)
    }

    /// Canonical, run-stable listing of every method's invoke instructions:
    /// one line per invoke, `<method>\t<offset>\t<opcode>\t<target>`.
    pub fn invoke_listing(&self) -> String {
        let mut out = String::new();
        for id in self.method_ids() {
            let sig = self.method_signature(id);
            for (insn, target) in self.method(id).invokes() {
                out.push_str(&format!(
                    "{}\t{:04x}\t{:02x}\t{}\n",
                    sig,
                    insn.offset,
                    insn.opcode,
                    self.method_ref(target)
                ));
            }
        }
        out
    }
}
