use super::insn::decode_code;
use super::sig::Prototype;
use super::{ClassDef, DexError, DexProgram, ProgramBuilder, ProgramSource, RefId};

const HEADER_SIZE: usize = 0x70;
const ENDIAN_CONSTANT: u32 = 0x1234_5678;
const REVERSE_ENDIAN_CONSTANT: u32 = 0x7856_3412;
const NO_INDEX: u32 = 0xffff_ffff;

/// Parse a DEX file. Only the structures needed to recover invocations are
/// read: header, string/type/proto/method ids, class defs, class data and
/// code items.
pub fn parse_dex(bytes: &[u8]) -> Result<DexProgram, DexError> {
    parse_dex_named("", bytes)
}

pub(crate) fn parse_dex_named(name: &str, bytes: &[u8]) -> Result<DexProgram, DexError> {
    let r = Reader { bytes };
    let header = Header::read(&r)?;

    let strings = (0..header.string_ids.0)
        .map(|i| {
            let off = r.u32(section_item(&header.string_ids, i, 4))? as usize;
            r.mutf8_string(off)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let string = |idx: u32| -> Result<&String, DexError> {
        strings.get(idx as usize).ok_or(DexError::BadIndex {
            what: "string_id",
            index: u64::from(idx),
            limit: strings.len() as u64,
        })
    };

    let types = (0..header.type_ids.0)
        .map(|i| {
            let idx = r.u32(section_item(&header.type_ids, i, 4))?;
            string(idx).cloned()
        })
        .collect::<Result<Vec<_>, _>>()?;

    let ty = |idx: u32| -> Result<&String, DexError> {
        types.get(idx as usize).ok_or(DexError::BadIndex {
            what: "type_id",
            index: u64::from(idx),
            limit: types.len() as u64,
        })
    };

    let protos = (0..header.proto_ids.0)
        .map(|i| {
            let at = section_item(&header.proto_ids, i, 12);
            let ret = ty(r.u32(at + 4)?)?.clone();
            let params_off = r.u32(at + 8)? as usize;
            let mut params = Vec::new();
            if params_off != 0 {
                let n = r.u32(params_off)? as usize;
                r.check(params_off + 4, n.saturating_mul(2))?;
                for k in 0..n {
                    params.push(ty(u32::from(r.u16(params_off + 4 + 2 * k)?))?.clone());
                }
            }
            Ok(Prototype { params, ret })
        })
        .collect::<Result<Vec<_>, DexError>>()?;

    let mut builder = ProgramBuilder::new(name, ProgramSource::DexBinary);
    let mut ref_of_method_id = Vec::with_capacity(header.method_ids.0 as usize);
    for i in 0..header.method_ids.0 {
        let at = section_item(&header.method_ids, i, 8);
        let class = ty(u32::from(r.u16(at)?))?;
        let proto_idx = r.u16(at + 2)? as usize;
        let proto = protos.get(proto_idx).ok_or(DexError::BadIndex {
            what: "proto_id",
            index: proto_idx as u64,
            limit: protos.len() as u64,
        })?;
        let name = string(r.u32(at + 4)?)?;
        ref_of_method_id.push(builder.intern_ref(class, name, proto.clone()));
    }

    for i in 0..header.class_defs.0 {
        let at = section_item(&header.class_defs, i, 32);
        let descriptor = ty(r.u32(at)?)?.clone();
        let access_flags = r.u32(at + 4)?;
        let super_idx = r.u32(at + 8)?;
        let superclass = if super_idx == NO_INDEX {
            None
        } else {
            Some(ty(super_idx)?.clone())
        };
        let class_data_off = r.u32(at + 24)? as usize;
        let mut class = ClassDef {
            descriptor,
            superclass,
            access_flags,
            methods: Vec::new(),
        };
        if class_data_off != 0 {
            read_class_data(&r, class_data_off, &ref_of_method_id, &mut builder, &mut class)?;
        }
        builder.add_class(class);
    }

    builder.set_tables(strings, types);
    Ok(builder.finish())
}

fn read_class_data(
    r: &Reader<'_>,
    off: usize,
    ref_of_method_id: &[RefId],
    builder: &mut ProgramBuilder,
    class: &mut ClassDef,
) -> Result<(), DexError> {
    let mut pos = off;
    let next = |pos: &mut usize| -> Result<u32, DexError> {
        let (v, n) = r.uleb128(*pos)?;
        *pos += n;
        Ok(v)
    };
    let static_fields = next(&mut pos)?;
    let instance_fields = next(&mut pos)?;
    let direct = next(&mut pos)?;
    let virtual_ = next(&mut pos)?;
    for _ in 0..(u64::from(static_fields) + u64::from(instance_fields)) {
        next(&mut pos)?;
        next(&mut pos)?;
    }
    for count in [direct, virtual_] {
        let mut method_idx: u32 = 0;
        for _ in 0..count {
            method_idx = method_idx.wrapping_add(next(&mut pos)?);
            let access_flags = next(&mut pos)?;
            let code_off = next(&mut pos)? as usize;
            let ref_id = *ref_of_method_id
                .get(method_idx as usize)
                .ok_or(DexError::BadIndex {
                    what: "method_id",
                    index: u64::from(method_idx),
                    limit: ref_of_method_id.len() as u64,
                })?;
            let (registers, code_units, instructions) = if code_off == 0 {
                (0, 0, Vec::new())
            } else {
                read_code_item(r, code_off, ref_of_method_id)?
            };
            let id = builder
                .define_method(ref_id, access_flags, registers, code_units, instructions)
                .map_err(|_| {
                    DexError::MalformedHeader(format!(
                        "method {} defined twice",
                        builder.method_ref(ref_id)
                    ))
                })?;
            class.methods.push(id);
        }
    }
    Ok(())
}

fn read_code_item(
    r: &Reader<'_>,
    off: usize,
    ref_of_method_id: &[RefId],
) -> Result<(u16, u32, Vec<crate::dex::Instruction>), DexError> {
    let registers = r.u16(off)?;
    let insns_size = r.u32(off + 12)? as usize;
    let base = off + 16;
    r.check(base, insns_size.saturating_mul(2))?;
    let units: Vec<u16> = (0..insns_size)
        .map(|k| r.u16(base + 2 * k))
        .collect::<Result<_, _>>()?;
    let mut insns = decode_code(&units, ref_of_method_id.len() as u32, base)?;
    for insn in &mut insns {
        if let Some(t) = insn.invoke_target {
            insn.invoke_target = Some(ref_of_method_id[t.index()]);
        }
    }
    Ok((registers, insns_size as u32, insns))
}

/// `(size, offset)` of an id section.
type Section = (u32, u32);

fn section_item(section: &Section, i: u32, item_size: usize) -> usize {
    section.1 as usize + i as usize * item_size
}

struct Header {
    string_ids: Section,
    type_ids: Section,
    proto_ids: Section,
    method_ids: Section,
    class_defs: Section,
}

impl Header {
    fn read(r: &Reader<'_>) -> Result<Header, DexError> {
        let bytes = r.bytes;
        if bytes.is_empty() {
            return Err(DexError::MalformedHeader("empty input".into()));
        }
        let magic_len = bytes.len().min(8);
        if !b"dex\n".starts_with(&bytes[..magic_len.min(4)]) {
            return Err(DexError::MalformedHeader("bad magic".into()));
        }
        if bytes.len() < 8 {
            return Err(DexError::TruncatedFile {
                offset: 0,
                needed: HEADER_SIZE,
                len: bytes.len(),
            });
        }
        let version = &bytes[4..8];
        if version[3] != 0 || !version[..3].iter().all(u8::is_ascii_digit) {
            return Err(DexError::MalformedHeader("bad magic version field".into()));
        }
        let version = std::str::from_utf8(&version[..3]).expect("ascii digits");
        if !("035"..="039").contains(&version) {
            return Err(DexError::UnsupportedVersion(version.to_string()));
        }
        r.check(0, HEADER_SIZE)?;

        let file_size = r.u32(32)? as usize;
        let header_size = r.u32(36)? as usize;
        let endian = r.u32(40)?;
        if endian == REVERSE_ENDIAN_CONSTANT {
            return Err(DexError::MalformedHeader("big-endian DEX is not supported".into()));
        }
        if endian != ENDIAN_CONSTANT {
            return Err(DexError::MalformedHeader(format!("bad endian tag {endian:#x}")));
        }
        if header_size != HEADER_SIZE {
            return Err(DexError::MalformedHeader(format!("header_size {header_size:#x}")));
        }
        if file_size > bytes.len() {
            return Err(DexError::TruncatedFile {
                offset: 0,
                needed: file_size,
                len: bytes.len(),
            });
        }
        if file_size < HEADER_SIZE || file_size != bytes.len() {
            return Err(DexError::MalformedHeader(format!(
                "file_size {file_size} does not match input length {}",
                bytes.len()
            )));
        }

        let section = |at: usize, item: usize| -> Result<Section, DexError> {
            let size = r.u32(at)?;
            let off = r.u32(at + 4)?;
            if size > 0 {
                r.check(off as usize, (size as usize).saturating_mul(item))?;
            }
            Ok((size, off))
        };
        Ok(Header {
            string_ids: section(56, 4)?,
            type_ids: section(64, 4)?,
            proto_ids: section(72, 12)?,
            method_ids: section(88, 8)?,
            class_defs: section(96, 32)?,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn check(&self, offset: usize, needed: usize) -> Result<(), DexError> {
        match offset.checked_add(needed) {
            Some(end) if end <= self.bytes.len() => Ok(()),
            _ => Err(DexError::TruncatedFile {
                offset,
                needed,
                len: self.bytes.len(),
            }),
        }
    }

    fn slice(&self, offset: usize, n: usize) -> Result<&'a [u8], DexError> {
        self.check(offset, n)?;
        Ok(&self.bytes[offset..offset + n])
    }

    fn u16(&self, offset: usize) -> Result<u16, DexError> {
        let b = self.slice(offset, 2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&self, offset: usize) -> Result<u32, DexError> {
        let b = self.slice(offset, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Returns the value and the number of bytes consumed.
    fn uleb128(&self, offset: usize) -> Result<(u32, usize), DexError> {
        let mut value: u32 = 0;
        for i in 0..5 {
            let b = self.slice(offset + i, 1)?[0];
            value |= u32::from(b & 0x7f) << (7 * i);
            if b & 0x80 == 0 {
                return Ok((value, i + 1));
            }
        }
        Err(DexError::MalformedHeader(format!("uleb128 at {offset:#x} longer than 5 bytes")))
    }

    /// `string_data_item`: uleb128 utf16 length, then NUL-terminated MUTF-8.
    fn mutf8_string(&self, offset: usize) -> Result<String, DexError> {
        let (_, n) = self.uleb128(offset)?;
        let start = offset + n;
        let rest = self.bytes.get(start..).unwrap_or_default();
        let end = rest.iter().position(|&b| b == 0).ok_or(DexError::TruncatedFile {
            offset: start,
            needed: rest.len() + 1,
            len: self.bytes.len(),
        })?;
        Ok(decode_mutf8(&rest[..end]))
    }
}

/// Modified UTF-8: like CESU-8 (surrogates encoded separately) with NUL as
/// `C0 80`. Invalid sequences decode to U+FFFD.
fn decode_mutf8(bytes: &[u8]) -> String {
    let mut units: Vec<u16> = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let cont = |k: usize| bytes.get(i + k).map(|c| u16::from(c & 0x3f));
        if b < 0x80 {
            units.push(u16::from(b));
            i += 1;
        } else if b & 0xe0 == 0xc0 {
            match cont(1) {
                Some(c) => units.push((u16::from(b & 0x1f) << 6) | c),
                None => units.push(0xfffd),
            }
            i += 2;
        } else if b & 0xf0 == 0xe0 {
            match (cont(1), cont(2)) {
                (Some(c1), Some(c2)) => units.push((u16::from(b & 0x0f) << 12) | (c1 << 6) | c2),
                _ => units.push(0xfffd),
            }
            i += 3;
        } else {
            units.push(0xfffd);
            i += 1;
        }
    }
    String::from_utf16_lossy(&units)
}
