//! Memory layout. Every scalar occupies one cell; aggregates are laid out
//! field by field with no padding.

use std::collections::HashMap;

use super::{StructDef, Type};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Int,
    Byte,
    Ptr,
}

/// Size in cells. Unknown struct names count as zero; the validator rejects them.
pub fn size_of(ty: &Type, structs: &HashMap<&str, &StructDef>) -> u64 {
    match ty {
        Type::Int | Type::Byte | Type::Ptr(_) | Type::Str | Type::FnPtr => 1,
        Type::Arr(elem, n) => size_of(elem, structs).saturating_mul(*n),
        Type::Struct(name) => structs
            .get(name.as_str())
            .map(|s| s.fields.iter().map(|f| size_of(f, structs)).sum())
            .unwrap_or(0),
    }
}

/// Cell offset of field `index` inside struct `name`.
pub fn field_offset(name: &str, index: u32, structs: &HashMap<&str, &StructDef>) -> Option<u64> {
    let def = structs.get(name)?;
    if index as usize >= def.fields.len() {
        return None;
    }
    Some(
        def.fields[..index as usize]
            .iter()
            .map(|f| size_of(f, structs))
            .sum(),
    )
}

pub fn flatten(ty: &Type, structs: &HashMap<&str, &StructDef>) -> Vec<CellKind> {
    let mut out = Vec::new();
    flatten_into(ty, structs, &mut out);
    out
}

fn flatten_into(ty: &Type, structs: &HashMap<&str, &StructDef>, out: &mut Vec<CellKind>) {
    match ty {
        Type::Int => out.push(CellKind::Int),
        Type::Byte => out.push(CellKind::Byte),
        Type::Ptr(_) | Type::Str | Type::FnPtr => out.push(CellKind::Ptr),
        Type::Arr(elem, n) => {
            let one = flatten(elem, structs);
            for _ in 0..*n {
                out.extend_from_slice(&one);
            }
        }
        Type::Struct(name) => {
            if let Some(def) = structs.get(name.as_str()) {
                for f in &def.fields {
                    flatten_into(f, structs, out);
                }
            }
        }
    }
}
