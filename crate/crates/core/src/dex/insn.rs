use serde::{Deserialize, Serialize};

use super::{DexError, Instruction, RefId};

/// Opcodes that invoke a method: 0x6e..=0x72 and their `/range` forms 0x74..=0x78.
pub const INVOKE_OPCODES: [u8; 10] = [0x6e, 0x6f, 0x70, 0x71, 0x72, 0x74, 0x75, 0x76, 0x77, 0x78];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvokeKind {
    Virtual,
    Super,
    Direct,
    Static,
    Interface,
}

impl InvokeKind {
    pub fn from_opcode(op: u8) -> Option<InvokeKind> {
        let kind = match op {
            0x6e | 0x74 => InvokeKind::Virtual,
            0x6f | 0x75 => InvokeKind::Super,
            0x70 | 0x76 => InvokeKind::Direct,
            0x71 | 0x77 => InvokeKind::Static,
            0x72 | 0x78 => InvokeKind::Interface,
            _ => return None,
        };
        Some(kind)
    }

    pub fn mnemonic(self, range: bool) -> &'static str {
        match (self, range) {
            (InvokeKind::Virtual, false) => "invoke-virtual",
            (InvokeKind::Super, false) => "invoke-super",
            (InvokeKind::Direct, false) => "invoke-direct",
            (InvokeKind::Static, false) => "invoke-static",
            (InvokeKind::Interface, false) => "invoke-interface",
            (InvokeKind::Virtual, true) => "invoke-virtual/range",
            (InvokeKind::Super, true) => "invoke-super/range",
            (InvokeKind::Direct, true) => "invoke-direct/range",
            (InvokeKind::Static, true) => "invoke-static/range",
            (InvokeKind::Interface, true) => "invoke-interface/range",
        }
    }
}

/// Width in code units of the instruction with this opcode, ignoring the
/// variable-length payload pseudo-instructions (handled in [`decode_code`]).
pub fn code_unit_width(op: u8) -> u32 {
    match op {
        0x00 | 0x01 | 0x04 | 0x07 => 1,
        0x02 | 0x05 | 0x08 => 2,
        0x03 | 0x06 | 0x09 => 3,
        0x0a..=0x12 => 1,
        0x13 => 2,
        0x14 => 3,
        0x15 | 0x16 => 2,
        0x17 => 3,
        0x18 => 5,
        0x19 | 0x1a => 2,
        0x1b => 3,
        0x1c => 2,
        0x1d | 0x1e => 1,
        0x1f | 0x20 => 2,
        0x21 => 1,
        0x22 | 0x23 => 2,
        0x24..=0x26 => 3,
        0x27 | 0x28 => 1,
        0x29 => 2,
        0x2a..=0x2c => 3,
        0x2d..=0x3d => 2,
        0x3e..=0x43 => 1,
        0x44..=0x6d => 2,
        0x6e..=0x72 => 3,
        0x73 => 1,
        0x74..=0x78 => 3,
        0x79 | 0x7a => 1,
        0x7b..=0x8f => 1,
        0x90..=0xaf => 2,
        0xb0..=0xcf => 1,
        0xd0..=0xe2 => 2,
        0xe3..=0xf9 => 1,
        // invoke-polymorphic{,/range}
        0xfa | 0xfb => 4,
        // invoke-custom{,/range}
        0xfc | 0xfd => 3,
        // const-method-handle, const-method-type
        0xfe | 0xff => 2,
    }
}

/// Width of a `nop`-coded payload (packed-switch, sparse-switch,
/// fill-array-data), read from its header units.
fn payload_width(units: &[u16], at: usize) -> Option<u64> {
    let get = |i: usize| units.get(at + i).copied().map(u64::from);
    match units[at] {
        0x0100 => Some(get(1)? * 2 + 4),
        0x0200 => Some(get(1)? * 4 + 2),
        0x0300 => {
            let elem = get(1)?;
            let count = get(2)? | (get(3)? << 16);
            Some((count * elem).div_ceil(2) + 4)
        }
        _ => unreachable!("not a payload ident"),
    }
}

/// Decode a method's code units into instructions. `method_ids` bounds the
/// method index carried by invoke instructions; `base` is the file offset of
/// the `insns` array, used only for error reporting.
pub(crate) fn decode_code(
    units: &[u16],
    method_ids: u32,
    base: usize,
) -> Result<Vec<Instruction>, DexError> {
    let mut out = Vec::new();
    let mut pc = 0usize;
    while pc < units.len() {
        let op = (units[pc] & 0xff) as u8;
        let width = if matches!(units[pc], 0x0100 | 0x0200 | 0x0300) {
            payload_width(units, pc).ok_or_else(|| truncated(base, pc, 4, units.len()))?
        } else {
            u64::from(code_unit_width(op))
        };
        let end = pc as u64 + width;
        if end > units.len() as u64 {
            return Err(truncated(base, pc, width as usize, units.len()));
        }
        let end = end as usize;
        let invoke_target = if INVOKE_OPCODES.contains(&op) {
            let idx = u32::from(units[pc + 1]);
            if idx >= method_ids {
                return Err(DexError::BadIndex {
                    what: "method_id",
                    index: u64::from(idx),
                    limit: u64::from(method_ids),
                });
            }
            Some(RefId(idx))
        } else {
            None
        };
        out.push(Instruction {
            offset: pc as u32,
            opcode: op,
            units: units[pc..end].to_vec(),
            invoke_target,
        });
        pc = end;
    }
    Ok(out)
}

fn truncated(base: usize, pc: usize, width: usize, len: usize) -> DexError {
    DexError::TruncatedFile {
        offset: base + pc * 2,
        needed: width * 2,
        len: base + len * 2,
    }
}
