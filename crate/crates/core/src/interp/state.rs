use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Machine, RegionId, RegionKind, Value};
use crate::analysis::post_neck_region;
use crate::ir::{field_offset, ConstValue, InstId, Operand, Type};

/// Where a captured value lives.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StatePath {
    Global(String),
    StackSlot { function: String, alloca: InstId },
    StructElem { base: Box<StatePath>, index: u32 },
    /// The object a pointer-typed location points to.
    PtrTarget(Box<StatePath>),
}

impl StatePath {
    pub fn elem(self, index: u32) -> StatePath {
        StatePath::StructElem { base: Box::new(self), index }
    }

    pub fn target(self) -> StatePath {
        StatePath::PtrTarget(Box::new(self))
    }

    /// Global or stack slot the path starts from.
    pub fn root(&self) -> &StatePath {
        match self {
            StatePath::StructElem { base, .. } | StatePath::PtrTarget(base) => base.root(),
            root => root,
        }
    }
}

impl fmt::Display for StatePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatePath::Global(g) => write!(f, "@{g}"),
            StatePath::StackSlot { function, alloca } => write!(f, "{function}:{alloca}"),
            StatePath::StructElem { base, index } => match &**base {
                StatePath::PtrTarget(inner) => write!(f, "{inner}->{index}"),
                other => write!(f, "{other}.{index}"),
            },
            StatePath::PtrTarget(base) => write!(f, "*{base}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CapturedVar {
    pub path: StatePath,
    pub declared_type: Type,
    pub value: ConstValue,
    /// Human-readable name using source register names.
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excluded {
    pub label: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PartialState {
    pub entries: Vec<CapturedVar>,
    pub visited_funcs: BTreeSet<String>,
    pub neck_crossings: u32,
    #[serde(default)]
    pub excluded: Vec<Excluded>,
}

impl PartialState {
    pub fn get(&self, path: &StatePath) -> Option<&CapturedVar> {
        self.entries.iter().find(|e| &e.path == path)
    }

    pub fn find_label(&self, label: &str) -> Option<&CapturedVar> {
        self.entries.iter().find(|e| e.label == label)
    }

    /// Entry-for-entry equality of paths and values.
    pub fn same_entries(&self, other: &PartialState) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.path == b.path && a.value == b.value)
    }
}

struct Capture<'m, 'p> {
    m: &'m Machine<'p>,
    entries: Vec<CapturedVar>,
    excluded: Vec<Excluded>,
}

impl Capture<'_, '_> {
    fn exclude(&mut self, label: &str, reason: &str) {
        self.excluded.push(Excluded { label: label.to_string(), reason: reason.to_string() });
    }

    fn push(&mut self, path: StatePath, ty: &Type, value: ConstValue, label: String) {
        self.entries.push(CapturedVar { path, declared_type: ty.clone(), value, label });
    }

    fn cell(&self, region: RegionId, offset: i64) -> Option<&Value> {
        self.m.regions.get(region.0 as usize)?.cells.get(usize::try_from(offset).ok()?)
    }

    fn scalar(&mut self, path: StatePath, ty: &Type, region: RegionId, offset: i64, label: String) {
        match self.cell(region, offset).and_then(to_const) {
            Some(v) => self.push(path, ty, v, label),
            None => self.exclude(&label, "undefined value"),
        }
    }

    fn fields(&mut self, base: StatePath, name: &str, region: RegionId, offset: i64, label: &str, arrow: bool) {
        let Some(def) = self.m.structs.get(name).copied() else { return };
        for (i, fty) in def.fields.iter().enumerate() {
            let i = i as u32;
            let flabel = if arrow { format!("{label}->{i}") } else { format!("{label}.{i}") };
            if !fty.is_numeric() {
                self.exclude(&flabel, "non-scalar struct field");
                continue;
            }
            let off = offset + field_offset(name, i, &self.m.structs).unwrap_or(0) as i64;
            self.scalar(base.clone().elem(i), fty, region, off, flabel);
        }
    }

    /// Captures the object of type `ty` stored at `(region, offset)`.
    fn object(&mut self, path: StatePath, ty: &Type, region: RegionId, offset: i64, label: String) {
        match ty {
            Type::Int | Type::Byte => self.scalar(path, ty, region, offset, label),
            Type::Struct(name) => self.fields(path, name, region, offset, &label, false),
            Type::Ptr(_) | Type::Str => self.pointer(path, ty, region, offset, label),
            Type::Arr(..) => self.exclude(&label, "array"),
            Type::FnPtr => self.exclude(&label, "function pointer"),
        }
    }

    fn pointer(&mut self, path: StatePath, ty: &Type, region: RegionId, offset: i64, label: String) {
        let (tr, to) = match self.cell(region, offset) {
            Some(Value::Ptr { region, offset }) => (*region, *offset),
            Some(Value::Null) => return self.push(path, ty, ConstValue::Null, label),
            Some(Value::Undef) | None => return self.exclude(&label, "undefined value"),
            Some(_) => return self.exclude(&label, "not a data pointer"),
        };
        let target_kind = &self.m.regions[tr.0 as usize].kind;
        if matches!(target_kind, RegionKind::ArgvArray) {
            return self.exclude(&label, "points into argv");
        }
        let pointee = ty.pointee().expect("pointer type");
        match pointee {
            Type::Byte
                if matches!(
                    target_kind,
                    RegionKind::Rodata | RegionKind::ArgvString(_) | RegionKind::Global(_)
                ) =>
            {
                match self.m.read_cstr(&Value::Ptr { region: tr, offset: to }, InstId(0)) {
                    Ok(bytes) => self.push(path, ty, ConstValue::Str(bytes), label),
                    Err(_) => self.exclude(&label, "unterminated string"),
                }
            }
            Type::Int | Type::Byte => self.scalar(path.target(), &pointee, tr, to, format!("*{label}")),
            Type::Struct(name) => self.fields(path.target(), &name, tr, to, &label, true),
            _ => self.exclude(&label, "pointer chain deeper than one level"),
        }
    }
}

fn to_const(v: &Value) -> Option<ConstValue> {
    match v {
        Value::Int(i) => Some(ConstValue::Int(*i)),
        Value::Byte(b) => Some(ConstValue::Byte(*b)),
        Value::Null => Some(ConstValue::Null),
        _ => None,
    }
}

pub(super) fn capture_state(m: &Machine, neck: InstId) -> PartialState {
    let mut cap = Capture { m, entries: Vec::new(), excluded: Vec::new() };
    for g in &m.prog.globals {
        let region = m.globals[g.name.as_str()];
        cap.object(StatePath::Global(g.name.clone()), &g.ty, region, 0, format!("@{}", g.name));
    }

    // Registers the main logic still refers to in the neck's function.
    let region = post_neck_region(m.prog, neck).ok();
    let top = m.frames.len().saturating_sub(1);
    let live_regs: HashSet<&str> = match (&region, m.frames.last()) {
        (Some(r), Some(frame)) => frame
            .func
            .insts()
            .filter(|i| r.contains(i.id))
            .flat_map(|i| i.op.operands())
            .filter_map(Operand::reg)
            .collect(),
        _ => HashSet::new(),
    };

    for (depth, frame) in m.frames.iter().enumerate() {
        let mut latest: Vec<(InstId, RegionId)> = Vec::new();
        for &(id, r) in &frame.slots {
            latest.retain(|(other, _)| *other != id);
            latest.push((id, r));
        }
        for (alloca, r) in latest {
            let reg = frame.func.inst(alloca).and_then(|i| i.result.as_deref()).unwrap_or("?");
            if depth == top && !live_regs.contains(reg) {
                continue;
            }
            let Some(ty) = m.regions[r.0 as usize].ty.clone() else { continue };
            let path = StatePath::StackSlot { function: frame.func.name.clone(), alloca };
            cap.object(path, &ty, r, 0, format!("{}:%{reg}", frame.func.name));
        }
    }

    let Capture { entries, mut excluded, .. } = cap;
    let mut kept = Vec::new();
    for e in entries {
        if reread(m, &e) {
            kept.push(e);
        } else {
            excluded.push(Excluded { label: e.label, reason: "inconsistent re-read".into() });
        }
    }
    PartialState {
        entries: kept,
        visited_funcs: m.visited.clone(),
        neck_crossings: m.neck_crossings,
        excluded,
    }
}

/// Location and static type of the object a path names.
fn locate(m: &Machine, path: &StatePath) -> Option<(RegionId, i64, Type)> {
    match path {
        StatePath::Global(g) => {
            let r = *m.globals.get(g.as_str())?;
            Some((r, 0, m.prog.global(g)?.ty.clone()))
        }
        StatePath::StackSlot { function, alloca } => {
            let r = m
                .frames
                .iter()
                .rev()
                .filter(|f| f.func.name == *function)
                .find_map(|f| f.slots.iter().rev().find(|(id, _)| id == alloca).map(|(_, r)| *r))?;
            Some((r, 0, m.regions[r.0 as usize].ty.clone()?))
        }
        StatePath::PtrTarget(base) => {
            let (r, o, ty) = locate(m, base)?;
            match m.regions[r.0 as usize].cells.get(o as usize)? {
                Value::Ptr { region, offset } => Some((*region, *offset, ty.pointee()?)),
                _ => None,
            }
        }
        StatePath::StructElem { base, index } => {
            let (r, o, ty) = locate(m, base)?;
            let Type::Struct(name) = ty else { return None };
            let off = field_offset(&name, *index, &m.structs)?;
            let fty = m.structs.get(name.as_str())?.fields.get(*index as usize)?.clone();
            Some((r, o + off as i64, fty))
        }
    }
}

/// Current value at `path`, read as a string when `as_str` is set.
pub(super) fn read_path(m: &Machine, path: &StatePath, as_str: bool) -> Option<ConstValue> {
    let (r, o, _) = locate(m, path)?;
    let cell = m.regions[r.0 as usize].cells.get(usize::try_from(o).ok()?)?;
    if as_str {
        m.read_cstr(cell, InstId(0)).ok().map(ConstValue::Str)
    } else {
        to_const(cell)
    }
}

fn reread(m: &Machine, e: &CapturedVar) -> bool {
    read_path(m, &e.path, matches!(e.value, ConstValue::Str(_))).as_ref() == Some(&e.value)
}

#[cfg(test)]
mod tests {
    use super::super::{run_to_neck, Invocation};
    use super::*;
    use crate::ir::parse_program;

    fn state(src: &str, args: &[&str]) -> PartialState {
        let p = parse_program(src).unwrap();
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        run_to_neck(&p, &Invocation::supplied(&args)).unwrap()
    }

    #[test]
    fn uninitialised_slot_is_not_captured() {
        let s = state(
            "fn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  %x = alloca int\n  neckmark\n  %v = load %x\n  ret 0\n}\n",
            &[],
        );
        assert!(s.entries.is_empty());
        assert_eq!(s.excluded.len(), 1);
        assert_eq!(s.neck_crossings, 1);
        assert_eq!(s.visited_funcs, BTreeSet::from(["main".to_string()]));
    }

    #[test]
    fn string_from_argv_is_captured_by_value() {
        let s = state(
            "fn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  %iface = alloca ptr<byte>\n  %p = index %argv, 1\n  %a = load %p\n  store %a, %iface\n  neckmark\n  %s = load %iface\n  call @print_str, %s\n  ret 0\n}\n",
            &["ens160"],
        );
        assert_eq!(s.entries.len(), 1);
        assert_eq!(s.entries[0].value, ConstValue::Str(b"ens160".to_vec()));
        assert_eq!(s.entries[0].label, "main:%iface");
    }

    #[test]
    fn struct_behind_pointer_yields_indexed_elements() {
        let s = state(
            "struct S { byte, int }\nfn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  %s = alloca ptr<struct S>\n  %h = heap struct S\n  store %h, %s\n  %f0 = field %h, 0\n  store 0, %f0\n  %f1 = field %h, 1\n  store 1, %f1\n  neckmark\n  %q = load %s\n  ret 0\n}\n",
            &[],
        );
        let labels: Vec<&str> = s.entries.iter().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, ["main:%s->0", "main:%s->1"]);
        assert_eq!(s.entries[0].value, ConstValue::Byte(0));
        assert_eq!(s.entries[1].value, ConstValue::Int(1));
        let slot = StatePath::StackSlot { function: "main".into(), alloca: InstId(0) };
        assert_eq!(s.entries[1].path, slot.target().elem(1));
    }

    #[test]
    fn path_json_round_trips() {
        let s = state(
            "global @g : int = 5\nfn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  neckmark\n  ret 0\n}\n",
            &[],
        );
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"global\":\"g\""));
        let back: PartialState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
