//! Minimal DEX assembler, the inverse of [`parse_dex`](super::parse_dex) for
//! the structures the parser reads. Used to materialize synthetic programs as
//! binary DEX files.
//!
//! Output is a version 035 file with sorted id sections, one `code_item` per
//! method with code, a `map_list` and a valid Adler-32 checksum. The SHA-1
//! signature field is left zeroed.

use std::collections::{BTreeMap, BTreeSet};

use super::{DexError, DexProgram, MethodId};

const NO_INDEX: u32 = 0xffff_ffff;
const ACC_DIRECT: u32 = 0x0002 | 0x0008 | 0x1_0000;
const OBJECT: &str = "Ljava/lang/Object;";

fn push_uleb(out: &mut Vec<u8>, mut v: u32) {
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

fn align4(out: &mut Vec<u8>) {
    while out.len() % 4 != 0 {
        out.push(0);
    }
}

fn put_u32(out: &mut [u8], at: usize, v: u32) {
    out[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for chunk in data.chunks(5552) {
        for &x in chunk {
            a += u32::from(x);
            b += a;
        }
        a %= 65521;
        b %= 65521;
    }
    (b << 16) | a
}

/// Serialize `program` as a DEX file.
///
/// Fails with [`DexError::BadIndex`] when the program has more than 65535
/// method references, types or prototypes (the 16-bit index limit).
pub fn assemble_dex(program: &DexProgram) -> Result<Vec<u8>, DexError> {
    // string and type tables
    let mut strings: BTreeSet<String> = BTreeSet::new();
    let mut types: BTreeSet<String> = BTreeSet::new();
    types.insert(OBJECT.to_string());
    for r in &program.method_refs {
        types.insert(r.class_descriptor.clone());
        types.insert(r.prototype.ret.clone());
        types.extend(r.prototype.params.iter().cloned());
        strings.insert(r.name.clone());
        strings.insert(r.prototype.shorty());
    }
    for c in &program.classes {
        types.insert(c.descriptor.clone());
        if let Some(s) = &c.superclass {
            types.insert(s.clone());
        }
    }
    strings.extend(types.iter().cloned());
    let strings: Vec<String> = strings.into_iter().collect();
    let string_idx: BTreeMap<&str, u32> = strings
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    // types sorted by string index == sorted by string
    let types: Vec<String> = types.into_iter().collect();
    let type_idx: BTreeMap<&str, u32> = types
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let limit = |what: &'static str, n: usize| {
        if n > 0xffff {
            Err(DexError::BadIndex { what, index: n as u64, limit: 0xffff })
        } else {
            Ok(())
        }
    };
    limit("type_id", types.len())?;

    // prototypes: sorted by (return type, params)
    let protos: BTreeSet<(u32, Vec<u32>)> = program
        .method_refs
        .iter()
        .map(|r| {
            (
                type_idx[r.prototype.ret.as_str()],
                r.prototype.params.iter().map(|p| type_idx[p.as_str()]).collect(),
            )
        })
        .collect();
    let protos: Vec<(u32, Vec<u32>)> = protos.into_iter().collect();
    limit("proto_id", protos.len())?;
    let proto_idx: BTreeMap<&(u32, Vec<u32>), u32> =
        protos.iter().enumerate().map(|(i, p)| (p, i as u32)).collect();

    // method ids: sorted by (class, name, proto)
    let mut method_ids: Vec<(u32, u32, u32, usize)> = program
        .method_refs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let key = (
                type_idx[r.prototype.ret.as_str()],
                r.prototype.params.iter().map(|p| type_idx[p.as_str()]).collect::<Vec<_>>(),
            );
            (
                type_idx[r.class_descriptor.as_str()],
                string_idx[r.name.as_str()],
                proto_idx[&key],
                i,
            )
        })
        .collect();
    method_ids.sort();
    limit("method_id", method_ids.len())?;
    let mut new_method_idx = vec![0u32; program.method_refs.len()];
    for (k, m) in method_ids.iter().enumerate() {
        new_method_idx[m.3] = k as u32;
    }

    let header_size = 0x70usize;
    let string_ids_off = header_size;
    let type_ids_off = string_ids_off + 4 * strings.len();
    let proto_ids_off = type_ids_off + 4 * types.len();
    let method_ids_off = proto_ids_off + 12 * protos.len();
    let class_defs_off = method_ids_off + 8 * method_ids.len();
    let data_off = class_defs_off + 32 * program.classes.len();

    let mut data: Vec<u8> = Vec::new();
    let abs = |data: &Vec<u8>| data_off + data.len();

    // type lists
    let mut type_list_off: BTreeMap<&Vec<u32>, usize> = BTreeMap::new();
    let mut n_type_lists = 0;
    let type_lists_start = abs(&data);
    for (_, params) in &protos {
        if params.is_empty() || type_list_off.contains_key(params) {
            continue;
        }
        align4(&mut data);
        type_list_off.insert(params, abs(&data));
        data.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            data.extend_from_slice(&(*p as u16).to_le_bytes());
        }
        n_type_lists += 1;
    }

    // code items
    align4(&mut data);
    let code_start = abs(&data);
    let mut code_off: BTreeMap<MethodId, usize> = BTreeMap::new();
    for id in program.method_ids() {
        let def = program.method(id);
        if def.instructions.is_empty() {
            continue;
        }
        align4(&mut data);
        code_off.insert(id, abs(&data));
        let units: Vec<u16> = def
            .instructions
            .iter()
            .flat_map(|insn| {
                let mut u = insn.units.clone();
                if let Some(t) = insn.invoke_target {
                    u[1] = new_method_idx[t.index()] as u16;
                }
                u
            })
            .collect();
        let registers = def.registers.max(1);
        data.extend_from_slice(&registers.to_le_bytes());
        data.extend_from_slice(&0u16.to_le_bytes()); // ins
        data.extend_from_slice(&0u16.to_le_bytes()); // outs
        data.extend_from_slice(&0u16.to_le_bytes()); // tries
        data.extend_from_slice(&0u32.to_le_bytes()); // debug_info_off
        data.extend_from_slice(&(units.len() as u32).to_le_bytes());
        for u in units {
            data.extend_from_slice(&u.to_le_bytes());
        }
    }

    // class data
    let class_data_start = abs(&data);
    let mut class_data_off = Vec::with_capacity(program.classes.len());
    for c in &program.classes {
        if c.methods.is_empty() {
            class_data_off.push(0);
            continue;
        }
        class_data_off.push(abs(&data));
        let mut direct = Vec::new();
        let mut virtual_ = Vec::new();
        for &m in &c.methods {
            let def = program.method(m);
            let entry = (new_method_idx[def.method_ref.index()], def.access_flags, m);
            if def.access_flags & ACC_DIRECT != 0 {
                direct.push(entry);
            } else {
                virtual_.push(entry);
            }
        }
        direct.sort();
        virtual_.sort();
        for v in [0, 0, direct.len() as u32, virtual_.len() as u32] {
            push_uleb(&mut data, v);
        }
        for list in [&direct, &virtual_] {
            let mut prev = 0;
            for &(idx, flags, m) in list.iter() {
                push_uleb(&mut data, idx - prev);
                push_uleb(&mut data, flags);
                push_uleb(&mut data, code_off.get(&m).copied().unwrap_or(0) as u32);
                prev = idx;
            }
        }
    }

    // string data
    let string_data_start = abs(&data);
    let mut string_data_off = Vec::with_capacity(strings.len());
    for s in &strings {
        string_data_off.push(abs(&data));
        push_uleb(&mut data, s.encode_utf16().count() as u32);
        for ch in s.encode_utf16() {
            // MUTF-8: three-byte form for surrogates and NUL as C0 80
            match ch {
                0 => data.extend_from_slice(&[0xc0, 0x80]),
                1..=0x7f => data.push(ch as u8),
                0x80..=0x7ff => {
                    data.push(0xc0 | (ch >> 6) as u8);
                    data.push(0x80 | (ch & 0x3f) as u8);
                }
                _ => {
                    data.push(0xe0 | (ch >> 12) as u8);
                    data.push(0x80 | ((ch >> 6) & 0x3f) as u8);
                    data.push(0x80 | (ch & 0x3f) as u8);
                }
            }
        }
        data.push(0);
    }

    // map list
    align4(&mut data);
    let map_off = abs(&data);
    let mut items: Vec<(u16, u32, usize)> = vec![
        (0x0000, 1, 0),
        (0x0001, strings.len() as u32, string_ids_off),
        (0x0002, types.len() as u32, type_ids_off),
        (0x0003, protos.len() as u32, proto_ids_off),
        (0x0005, method_ids.len() as u32, method_ids_off),
        (0x0006, program.classes.len() as u32, class_defs_off),
        (0x1001, n_type_lists, type_lists_start),
        (0x2001, code_off.len() as u32, code_start),
        (0x2000, class_data_off.iter().filter(|&&o| o != 0).count() as u32, class_data_start),
        (0x2002, strings.len() as u32, string_data_start),
        (0x1000, 1, map_off),
    ];
    items.retain(|&(_, n, _)| n > 0);
    data.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (ty, n, off) in items {
        data.extend_from_slice(&ty.to_le_bytes());
        data.extend_from_slice(&0u16.to_le_bytes());
        data.extend_from_slice(&n.to_le_bytes());
        data.extend_from_slice(&(off as u32).to_le_bytes());
    }

    // id sections
    let mut out = vec![0u8; data_off];
    out.extend_from_slice(&data);
    for (i, off) in string_data_off.iter().enumerate() {
        put_u32(&mut out, string_ids_off + 4 * i, *off as u32);
    }
    for (i, t) in types.iter().enumerate() {
        put_u32(&mut out, type_ids_off + 4 * i, string_idx[t.as_str()]);
    }
    for (i, (ret, params)) in protos.iter().enumerate() {
        let at = proto_ids_off + 12 * i;
        let shorty: String = std::iter::once(*ret)
            .chain(params.iter().copied())
            .map(|t| match types[t as usize].as_bytes()[0] {
                b'L' | b'[' => 'L',
                c => c as char,
            })
            .collect();
        put_u32(&mut out, at, string_idx[shorty.as_str()]);
        put_u32(&mut out, at + 4, *ret);
        put_u32(&mut out, at + 8, type_list_off.get(params).copied().unwrap_or(0) as u32);
    }
    for (i, (class, name, proto, _)) in method_ids.iter().enumerate() {
        let at = method_ids_off + 8 * i;
        out[at..at + 2].copy_from_slice(&(*class as u16).to_le_bytes());
        out[at + 2..at + 4].copy_from_slice(&(*proto as u16).to_le_bytes());
        put_u32(&mut out, at + 4, *name);
    }
    for (i, c) in program.classes.iter().enumerate() {
        let at = class_defs_off + 32 * i;
        let superclass = c.superclass.as_deref().unwrap_or(OBJECT);
        let fields = [
            type_idx[c.descriptor.as_str()],
            c.access_flags,
            if c.descriptor == OBJECT { NO_INDEX } else { type_idx[superclass] },
            0,
            NO_INDEX,
            0,
            class_data_off[i] as u32,
            0,
        ];
        for (k, v) in fields.into_iter().enumerate() {
            put_u32(&mut out, at + 4 * k, v);
        }
    }

    // header
    out[..8].copy_from_slice(b"dex\n035\0");
    let file_size = out.len() as u32;
    let header_fields: [(usize, u32); 17] = [
        (32, file_size),
        (36, header_size as u32),
        (40, 0x1234_5678),
        (52, map_off as u32),
        (56, strings.len() as u32),
        (60, string_ids_off as u32),
        (64, types.len() as u32),
        (68, type_ids_off as u32),
        (72, protos.len() as u32),
        (76, proto_ids_off as u32),
        (88, method_ids.len() as u32),
        (92, method_ids_off as u32),
        (96, program.classes.len() as u32),
        (100, class_defs_off as u32),
        (104, file_size - data_off as u32),
        (108, data_off as u32),
        (44, 0),
    ];
    for (at, v) in header_fields {
        put_u32(&mut out, at, v);
    }
    let checksum = adler32(&out[12..]);
    put_u32(&mut out, 8, checksum);
    Ok(out)
}
