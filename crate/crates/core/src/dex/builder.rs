use std::collections::HashMap;

use super::prefix::kind_for;
use super::{
    ClassDef, DexProgram, Instruction, MethodDef, MethodId, MethodRef, ProgramSource, Prototype,
    RefId, RefKind,
};

/// Incremental construction of a [`DexProgram`].
///
/// References are interned by full signature, so a signature occurs once in
/// `method_refs`. Kinds are assigned in [`ProgramBuilder::finish`], once the
/// set of defined methods is known.
#[derive(Debug)]
pub struct ProgramBuilder {
    name: String,
    source: ProgramSource,
    strings: Vec<String>,
    types: Vec<String>,
    refs: Vec<MethodRef>,
    by_signature: HashMap<String, RefId>,
    methods: Vec<MethodDef>,
    defined: HashMap<RefId, MethodId>,
    classes: Vec<ClassDef>,
}

impl ProgramBuilder {
    pub fn new(name: impl Into<String>, source: ProgramSource) -> Self {
        ProgramBuilder {
            name: name.into(),
            source,
            strings: Vec::new(),
            types: Vec::new(),
            refs: Vec::new(),
            by_signature: HashMap::new(),
            methods: Vec::new(),
            defined: HashMap::new(),
            classes: Vec::new(),
        }
    }

    pub fn set_tables(&mut self, strings: Vec<String>, types: Vec<String>) {
        self.strings = strings;
        self.types = types;
    }

    /// Intern a reference, returning the existing id for a known signature.
    pub fn intern_ref(&mut self, class: &str, name: &str, prototype: Prototype) -> RefId {
        let r = MethodRef {
            class_descriptor: class.to_string(),
            name: name.to_string(),
            prototype,
            kind: RefKind::ExternalIgnored,
        };
        let sig = r.signature();
        if let Some(&id) = self.by_signature.get(&sig) {
            return id;
        }
        let id = RefId(self.refs.len() as u32);
        self.refs.push(r);
        self.by_signature.insert(sig, id);
        id
    }

    pub fn method_ref(&self, id: RefId) -> &MethodRef {
        &self.refs[id.index()]
    }

    /// Attach a definition to `method_ref`. Fails with the already defined
    /// method when the signature has a definition.
    pub fn define_method(
        &mut self,
        method_ref: RefId,
        access_flags: u32,
        registers: u16,
        code_units: u32,
        instructions: Vec<Instruction>,
    ) -> Result<MethodId, MethodId> {
        if let Some(&existing) = self.defined.get(&method_ref) {
            return Err(existing);
        }
        let id = MethodId(self.methods.len() as u32);
        self.methods.push(MethodDef {
            method_ref,
            access_flags,
            registers,
            code_units,
            instructions,
        });
        self.defined.insert(method_ref, id);
        Ok(id)
    }

    pub fn add_class(&mut self, class: ClassDef) {
        self.classes.push(class);
    }

    pub fn finish(mut self) -> DexProgram {
        let mut ref_to_method = vec![None; self.refs.len()];
        for (&r, &m) in &self.defined {
            ref_to_method[r.index()] = Some(m);
        }
        for (r, def) in self.refs.iter_mut().zip(&ref_to_method) {
            r.kind = kind_for(&r.class_descriptor, def.is_some());
        }
        DexProgram {
            name: self.name,
            source: self.source,
            strings: self.strings,
            types: self.types,
            classes: self.classes,
            methods: self.methods,
            method_refs: self.refs,
            ref_to_method,
            by_signature: self.by_signature,
        }
    }
}
