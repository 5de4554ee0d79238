//! Syntactic memory locations and a flow-insensitive address-escape check.

use std::collections::{HashMap, HashSet};

use crate::analysis::{def_use, DefKey};
use crate::ir::{infer_types, ConstValue, Function, Instruction, Op, Operand, Program, Type, TypeEnv};
use crate::ir::InstId;

/// The memory object an address operand names.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Loc {
    Global(String),
    /// Stack slot created by the given `alloca`.
    Slot(InstId),
    /// Heap object created by the given `heap`.
    Heap(InstId),
    Elem(Box<Loc>, u32),
    /// Some element of an array or buffer.
    Index(Box<Loc>),
    /// The object a pointer stored at the inner location points to.
    Deref(Box<Loc>),
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Step {
    Elem(u32),
    Index,
    Deref,
}

impl Loc {
    fn chain(&self) -> (&Loc, Vec<Step>) {
        match self {
            Loc::Elem(inner, i) => {
                let (r, mut s) = inner.chain();
                s.push(Step::Elem(*i));
                (r, s)
            }
            Loc::Index(inner) => {
                let (r, mut s) = inner.chain();
                s.push(Step::Index);
                (r, s)
            }
            Loc::Deref(inner) => {
                let (r, mut s) = inner.chain();
                s.push(Step::Deref);
                (r, s)
            }
            root => (root, Vec::new()),
        }
    }

    /// Whether `a` is this location or one it is computed from.
    pub fn has_ancestor(&self, a: &Loc) -> bool {
        if self == a {
            return true;
        }
        match self {
            Loc::Elem(inner, _) | Loc::Index(inner) | Loc::Deref(inner) => inner.has_ancestor(a),
            _ => false,
        }
    }

    /// Names a fixed object without going through a pointer.
    pub fn is_concrete(&self) -> bool {
        let (root, steps) = self.chain();
        !matches!(root, Loc::Unknown) && !steps.contains(&Step::Deref)
    }

    /// Same base object, but different fields of it.
    pub fn diverges_from(&self, other: &Loc) -> bool {
        let (r1, s1) = self.chain();
        let (r2, s2) = other.chain();
        if r1 != r2 || matches!(r1, Loc::Unknown) {
            return false;
        }
        for (a, b) in s1.iter().zip(&s2) {
            match (a, b) {
                (Step::Elem(i), Step::Elem(j)) if i != j => return true,
                (x, y) if x == y => continue,
                _ => return false,
            }
        }
        false
    }

    /// The location before the first dereference, if any.
    fn deref_base(&self) -> Option<Loc> {
        let (root, steps) = self.chain();
        let k = steps.iter().position(|s| *s == Step::Deref)?;
        let mut loc = root.clone();
        for s in &steps[..k] {
            loc = match s {
                Step::Elem(i) => Loc::Elem(Box::new(loc), *i),
                Step::Index => Loc::Index(Box::new(loc)),
                Step::Deref => unreachable!("before first deref"),
            };
        }
        Some(loc)
    }
}

pub struct Locations {
    regs: HashMap<String, Loc>,
    env: TypeEnv,
    globals: HashMap<String, Type>,
}

impl Locations {
    fn new(p: &Program, f: &Function) -> Locations {
        let env = infer_types(p, f);
        let defs: HashMap<&str, &Instruction> =
            f.insts().filter_map(|i| i.result.as_deref().map(|r| (r, i))).collect();
        let mut regs = HashMap::new();
        for &r in defs.keys() {
            compute(r, &defs, &env, &mut regs, 0);
        }
        let globals = p.globals.iter().map(|g| (g.name.clone(), g.ty.clone())).collect();
        Locations { regs, env, globals }
    }

    pub fn loc_of(&self, o: &Operand) -> Loc {
        match o {
            Operand::Global(g) => Loc::Global(g.clone()),
            Operand::Reg(r) => self.regs.get(r).cloned().unwrap_or(Loc::Unknown),
            Operand::Const(_) => Loc::Unknown,
        }
    }

    pub fn type_of(&self, o: &Operand) -> Option<Type> {
        match o {
            Operand::Global(g) => self.globals.get(g).map(|t| Type::ptr(t.clone())),
            Operand::Const(ConstValue::Null) => Some(Type::ptr(Type::Byte)),
            Operand::Const(c) => Some(c.ty()),
            Operand::Reg(r) => self.env.get(r).cloned(),
        }
    }
}

fn compute(
    r: &str,
    defs: &HashMap<&str, &Instruction>,
    env: &TypeEnv,
    memo: &mut HashMap<String, Loc>,
    depth: usize,
) -> Loc {
    if let Some(l) = memo.get(r) {
        return l.clone();
    }
    let Some(inst) = defs.get(r) else { return Loc::Unknown };
    if depth > 64 {
        return Loc::Unknown;
    }
    let sub = |o: &Operand, memo: &mut HashMap<String, Loc>| match o {
        Operand::Global(g) => Loc::Global(g.clone()),
        Operand::Reg(x) => compute(x, defs, env, memo, depth + 1),
        Operand::Const(_) => Loc::Unknown,
    };
    let loc = match &inst.op {
        Op::Alloca(_) => Loc::Slot(inst.id),
        Op::Heap(_) => Loc::Heap(inst.id),
        Op::Field { base, index } => Loc::Elem(Box::new(sub(base, memo)), *index),
        Op::Index { base, .. } => Loc::Index(Box::new(sub(base, memo))),
        Op::Load(a) if env.get(r).is_some_and(Type::is_pointer_like) => Loc::Deref(Box::new(sub(a, memo))),
        _ => Loc::Unknown,
    };
    memo.insert(r.to_string(), loc.clone());
    loc
}

/// Locations for every function plus which objects can be reached other
/// than through their own name.
pub struct ProgramLocs<'p> {
    per_fn: HashMap<&'p str, Locations>,
    /// Concrete roots whose address escapes.
    taken_roots: HashSet<Loc>,
    /// Locations whose pointee may be reached through another pointer.
    shared_targets: HashSet<Loc>,
}

impl<'p> ProgramLocs<'p> {
    pub fn new(p: &'p Program) -> ProgramLocs<'p> {
        let per_fn: HashMap<&str, Locations> =
            p.functions.iter().map(|f| (f.name.as_str(), Locations::new(p, f))).collect();
        let mut taken_roots = HashSet::new();
        let mut shared_targets = HashSet::new();
        for f in &p.functions {
            let locs = &per_fn[f.name.as_str()];
            let du = def_use(f);
            for inst in f.insts() {
                let non_address: Vec<&Operand> = match &inst.op {
                    Op::Load(_) | Op::Field { .. } => Vec::new(),
                    Op::Index { index, .. } => vec![index],
                    Op::Store { value, .. } => vec![value],
                    other => other.operands(),
                };
                for o in non_address {
                    let l = locs.loc_of(o);
                    if matches!(l, Loc::Unknown) {
                        continue;
                    }
                    match l.deref_base() {
                        Some(base) => {
                            shared_targets.insert(base);
                        }
                        None => {
                            taken_roots.insert(l.chain().0.clone());
                        }
                    }
                }
                // A pointer stored into a location is shared unless the
                // stored value is a fresh object used nowhere else.
                if let Op::Store { value, addr } = &inst.op {
                    let dest = locs.loc_of(addr);
                    let fresh = match value {
                        Operand::Const(_) => true,
                        Operand::Reg(r) => f.def_of(r).is_some_and(|d| {
                            matches!(d.op, Op::Heap(_) | Op::Alloca(_))
                                && du.uses_of(&DefKey::Inst(d.id)).len() == 1
                        }),
                        Operand::Global(_) => false,
                    };
                    if !fresh && locs.type_of(value).is_some_and(|t| t.is_pointer_like()) {
                        shared_targets.insert(dest);
                    }
                }
            }
        }
        ProgramLocs { per_fn, taken_roots, shared_targets }
    }

    pub fn of(&self, function: &str) -> &Locations {
        &self.per_fn[function]
    }

    /// Whether the object at `target` may be written through a pointer the
    /// syntactic location does not show.
    pub fn is_taken(&self, target: &Loc) -> bool {
        let (root, _) = target.chain();
        if matches!(root, Loc::Unknown) || self.taken_roots.contains(root) {
            return true;
        }
        let Some(base) = target.deref_base() else { return false };
        if base.deref_base().is_some() || !base.is_concrete() {
            return true;
        }
        // The pointer lives at `base`; a nested dereference inside the
        // remaining path is treated as shared.
        let (_, steps) = target.chain();
        if steps.iter().filter(|s| **s == Step::Deref).count() > 1 {
            return true;
        }
        self.shared_targets.contains(&base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn field_through_loaded_pointer() {
        let p = parse_program(
            "struct S { int, int }\nfn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  %s = alloca ptr<struct S>\n  %h = heap struct S\n  store %h, %s\n  %p = load %s\n  %f = field %p, 1\n  store 1, %f\n  ret 0\n}\n",
        )
        .unwrap();
        let pl = ProgramLocs::new(&p);
        let l = pl.of("main").loc_of(&Operand::Reg("f".into()));
        let expected = Loc::Elem(Box::new(Loc::Deref(Box::new(Loc::Slot(InstId(0))))), 1);
        assert_eq!(l, expected);
        assert!(!pl.is_taken(&expected));
        assert!(!expected.is_concrete());
        let other = Loc::Elem(Box::new(Loc::Deref(Box::new(Loc::Slot(InstId(0))))), 0);
        assert!(other.diverges_from(&expected));
    }

    #[test]
    fn escaping_pointer_marks_target_shared() {
        let p = parse_program(
            "struct S { int, int }\nfn @use(%q: ptr<struct S>) {\nentry:\n  ret\n}\nfn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  %s = alloca ptr<struct S>\n  %h = heap struct S\n  store %h, %s\n  call @use, %h\n  ret 0\n}\n",
        )
        .unwrap();
        let pl = ProgramLocs::new(&p);
        let slot = p.function("main").unwrap().blocks[0].insts[0].id;
        let target = Loc::Elem(Box::new(Loc::Deref(Box::new(Loc::Slot(slot)))), 1);
        assert!(pl.is_taken(&target));
    }
}
