use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::typeck::{accepts, callee_signature, infer_types, is_comparison_on_pointers, OperandTy, TypeEnv};
use super::{BinOp, ConstValue, Function, Initializer, InstId, Intrinsic, Op, Operand, Program, Type};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    Inst(InstId),
    Entity(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub subject: Subject,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subject {
            Subject::Inst(id) => write!(f, "{id}: {}", self.message),
            Subject::Entity(name) => write!(f, "{name}: {}", self.message),
        }
    }
}

struct Sink(Vec<Diagnostic>);

impl Sink {
    fn entity(&mut self, name: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic { subject: Subject::Entity(name.into()), message: message.into() });
    }
    fn inst(&mut self, id: InstId, message: impl Into<String>) {
        self.0.push(Diagnostic { subject: Subject::Inst(id), message: message.into() });
    }
}

/// Checks every structural and typing invariant of the IR. An empty result
/// means the program is well formed.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut sink = Sink(Vec::new());
    check_structs(p, &mut sink);
    check_globals(p, &mut sink);

    let mut seen = HashSet::new();
    for f in &p.functions {
        if !seen.insert(f.name.as_str()) {
            sink.entity(format!("@{}", f.name), "duplicate function name");
        }
        if Intrinsic::from_name(&f.name).is_some() {
            sink.entity(format!("@{}", f.name), "function name shadows an intrinsic");
        }
        check_function(p, f, &mut sink);
    }
    if let Some(main) = p.function("main") {
        let sig_ok = main.params.len() == 2
            && main.params[0].ty == Type::Int
            && main.params[1].ty == Type::ptr(Type::ptr(Type::Byte))
            && matches!(main.ret, None | Some(Type::Int));
        if !sig_ok {
            sink.entity("@main", "main must have signature (int, ptr<ptr<byte>>) -> int");
        }
    }
    let necks = p.neck_marks();
    if necks.len() > 1 {
        for id in &necks[1..] {
            sink.inst(*id, "more than one neckmark in program");
        }
    }
    sink.0
}

fn check_type(p: &Program, ty: &Type, owner: &str, sink: &mut Sink) {
    match ty {
        Type::Ptr(inner) => check_type(p, inner, owner, sink),
        Type::Arr(inner, n) => {
            if *n < 1 {
                sink.entity(owner, "array length must be at least 1");
            }
            check_type(p, inner, owner, sink);
        }
        Type::Struct(name) if p.struct_def(name).is_none() => {
            sink.entity(owner, format!("unknown struct `{name}`"));
        }
        _ => {}
    }
}

fn check_structs(p: &Program, sink: &mut Sink) {
    let mut seen = HashSet::new();
    for s in &p.structs {
        let owner = format!("struct {}", s.name);
        if !seen.insert(s.name.as_str()) {
            sink.entity(&owner, "duplicate struct name");
        }
        if s.fields.is_empty() {
            sink.entity(&owner, "struct has no fields");
        }
        for f in &s.fields {
            check_type(p, f, &owner, sink);
        }
    }
    // By-value containment must be acyclic.
    fn contains_by_value<'a>(ty: &'a Type, out: &mut Vec<&'a str>) {
        match ty {
            Type::Struct(n) => out.push(n),
            Type::Arr(inner, _) => contains_by_value(inner, out),
            _ => {}
        }
    }
    for s in &p.structs {
        let mut stack: Vec<&str> = Vec::new();
        for f in &s.fields {
            contains_by_value(f, &mut stack);
        }
        let mut visited = HashSet::new();
        while let Some(name) = stack.pop() {
            if name == s.name {
                sink.entity(format!("struct {}", s.name), "struct contains itself by value");
                break;
            }
            if !visited.insert(name) {
                continue;
            }
            if let Some(def) = p.struct_def(name) {
                for f in &def.fields {
                    contains_by_value(f, &mut stack);
                }
            }
        }
    }
}

fn check_globals(p: &Program, sink: &mut Sink) {
    let mut seen = HashSet::new();
    for g in &p.globals {
        let owner = format!("@{}", g.name);
        if !seen.insert(g.name.as_str()) {
            sink.entity(&owner, "duplicate global name");
        }
        check_type(p, &g.ty, &owner, sink);
        let ok = match (&g.init, &g.ty) {
            (Initializer::Zero, _) => true,
            (Initializer::Const(ConstValue::Int(_) | ConstValue::Byte(_)), t) => t.is_numeric(),
            (Initializer::Const(ConstValue::Null), t) => t.is_pointer_like(),
            (Initializer::Const(ConstValue::Str(bytes)), t) => match t {
                Type::Str => true,
                Type::Ptr(inner) => **inner == Type::Byte,
                Type::Arr(inner, n) => **inner == Type::Byte && (bytes.len() as u64) < *n,
                _ => false,
            },
        };
        if !ok {
            sink.entity(&owner, format!("initializer `{}` does not fit type `{}`", g.init, g.ty));
        }
    }
}

fn check_function(p: &Program, f: &Function, sink: &mut Sink) {
    let owner = format!("@{}", f.name);
    for param in &f.params {
        check_type(p, &param.ty, &owner, sink);
    }
    if let Some(r) = &f.ret {
        check_type(p, r, &owner, sink);
        if !r.is_scalar() {
            sink.entity(&owner, "functions must return a scalar");
        }
    }
    if f.blocks.is_empty() {
        sink.entity(&owner, "function has no blocks");
        return;
    }

    let mut labels: HashMap<&str, usize> = HashMap::new();
    for (i, b) in f.blocks.iter().enumerate() {
        if labels.insert(b.label.as_str(), i).is_some() {
            sink.entity(format!("{owner}:{}", b.label), "duplicate block label");
        }
    }

    // Block shape and successors.
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); f.blocks.len()];
    for (bi, b) in f.blocks.iter().enumerate() {
        let block_name = format!("{owner}:{}", b.label);
        match b.insts.last() {
            None => sink.entity(&block_name, "block is empty"),
            Some(last) if !last.op.is_terminator() => {
                sink.entity(&block_name, "block does not end with a terminator")
            }
            _ => {}
        }
        for inst in b.insts.iter().take(b.insts.len().saturating_sub(1)) {
            if inst.op.is_terminator() {
                sink.inst(inst.id, format!("terminator `{}` in the middle of block `{}`", inst.op.mnemonic(), b.label));
            }
        }
        for target in b.successors() {
            match labels.get(target) {
                Some(&t) => succs[bi].push(t),
                None => sink.entity(&block_name, format!("unknown label `{target}`")),
            }
        }
    }
    if succs.iter().any(|s| s.contains(&0)) {
        sink.entity(format!("{owner}:{}", f.blocks[0].label), "entry block has predecessors");
    }

    // Unique definitions.
    let mut defined: HashSet<&str> = HashSet::new();
    for param in &f.params {
        if !defined.insert(param.name.as_str()) {
            sink.entity(&owner, format!("duplicate parameter `%{}`", param.name));
        }
    }
    for inst in f.insts() {
        if let Some(r) = &inst.result {
            if !defined.insert(r.as_str()) {
                sink.inst(inst.id, format!("register `%{r}` is assigned more than once"));
            }
        }
    }

    check_def_before_use(f, &succs, &defined, sink);

    let env = infer_types(p, f);
    for inst in f.insts() {
        check_inst(p, f, &env, inst.id, &inst.result, &inst.op, sink);
    }
}

fn check_def_before_use<'a>(f: &'a Function, succs: &[Vec<usize>], all: &HashSet<&'a str>, sink: &mut Sink) {
    let n = f.blocks.len();
    let mut reachable = vec![false; n];
    let mut stack = vec![0usize];
    reachable[0] = true;
    while let Some(b) = stack.pop() {
        for &s in &succs[b] {
            if !reachable[s] {
                reachable[s] = true;
                stack.push(s);
            }
        }
    }
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (b, ss) in succs.iter().enumerate() {
        if reachable[b] {
            for &s in ss {
                preds[s].push(b);
            }
        }
    }
    let params: HashSet<&'a str> = f.params.iter().map(|p| p.name.as_str()).collect();
    let block_defs: Vec<HashSet<&'a str>> = f
        .blocks
        .iter()
        .map(|b| b.insts.iter().filter_map(|i| i.result.as_deref()).collect())
        .collect();

    // Must-defined sets at block exit; unvisited blocks start at "everything".
    let mut out: Vec<HashSet<&'a str>> = vec![all.clone(); n];
    out[0] = params.union(&block_defs[0]).copied().collect();
    let entry_in = |b: usize, out: &Vec<HashSet<&'a str>>| -> HashSet<&'a str> {
        if b == 0 {
            return params.clone();
        }
        let mut it = preds[b].iter();
        let Some(&first) = it.next() else { return all.clone() };
        let mut acc = out[first].clone();
        for &p in it {
            acc.retain(|r| out[p].contains(r));
        }
        acc
    };
    let mut changed = true;
    while changed {
        changed = false;
        for b in 0..n {
            if !reachable[b] {
                continue;
            }
            let mut new_out = entry_in(b, &out);
            new_out.extend(block_defs[b].iter().copied());
            if new_out != out[b] {
                out[b] = new_out;
                changed = true;
            }
        }
    }

    for (bi, block) in f.blocks.iter().enumerate() {
        let mut live: HashSet<&str> = if reachable[bi] { entry_in(bi, &out) } else { all.clone() };
        for inst in &block.insts {
            for o in inst.op.operands() {
                if let Operand::Reg(r) = o {
                    if !all.contains(r.as_str()) {
                        sink.inst(inst.id, format!("use of undefined register `%{r}`"));
                    } else if !live.contains(r.as_str()) {
                        sink.inst(inst.id, format!("register `%{r}` may be used before it is assigned"));
                    }
                }
            }
            if let Some(r) = &inst.result {
                live.insert(r.as_str());
            }
        }
    }
}

fn check_inst(
    p: &Program,
    f: &Function,
    env: &TypeEnv,
    id: InstId,
    result: &Option<String>,
    op: &Op,
    sink: &mut Sink,
) {
    let ty = |o: &Operand| env.operand(p, o);
    let known = |o: &Operand| env.operand_type(p, o);
    let describe = |o: &Operand| known(o).map_or_else(|| "unknown".to_string(), |t| t.to_string());

    for o in op.operands() {
        if let Operand::Global(g) = o {
            if p.global(g).is_none() {
                sink.inst(id, format!("unknown global `@{g}`"));
            }
        }
    }

    let produces = matches!(
        op,
        Op::Const(_) | Op::Bin(..) | Op::Alloca(_) | Op::Heap(_) | Op::Load(_) | Op::Field { .. } | Op::Index { .. } | Op::FuncAddr(_)
    );
    let never = matches!(op, Op::Store { .. } | Op::Br(_) | Op::Cbr { .. } | Op::Ret(_) | Op::NeckMark);
    if produces && result.is_none() {
        sink.inst(id, format!("`{}` needs a result register", op.mnemonic()));
    }
    if never && result.is_some() {
        sink.inst(id, format!("`{}` does not produce a value", op.mnemonic()));
    }

    let deref = |o: &Operand, what: &str, sink: &mut Sink| -> Option<Type> {
        match ty(o) {
            OperandTy::Known(t) => match t.pointee() {
                Some(pt) if pt.is_scalar() => Some(pt),
                Some(pt) => {
                    sink.inst(id, format!("{what} of non-scalar `{pt}`"));
                    None
                }
                None => {
                    sink.inst(id, format!("{what} through non-pointer `{t}`"));
                    None
                }
            },
            OperandTy::Null => {
                sink.inst(id, format!("{what} through null"));
                None
            }
            OperandTy::Unknown => None,
        }
    };

    match op {
        Op::Const(_) | Op::Alloca(_) | Op::Heap(_) | Op::NeckMark | Op::Br(_) => {
            if let Op::Alloca(t) | Op::Heap(t) = op {
                check_type(p, t, &id.to_string(), sink);
            }
        }
        Op::Bin(bin, a, b) => {
            let numeric = |o: &Operand| matches!(ty(o), OperandTy::Known(t) if t.is_numeric());
            let pointerish = |o: &Operand| match ty(o) {
                OperandTy::Known(t) => t.is_pointer_like(),
                OperandTy::Null => true,
                OperandTy::Unknown => false,
            };
            let unknown = |o: &Operand| matches!(ty(o), OperandTy::Unknown);
            let ok = (numeric(a) || unknown(a)) && (numeric(b) || unknown(b))
                || is_comparison_on_pointers(*bin) && (pointerish(a) || unknown(a)) && (pointerish(b) || unknown(b));
            if !ok {
                sink.inst(id, format!("`{}` on `{}` and `{}`", bin.mnemonic(), describe(a), describe(b)));
            }
            if *bin == BinOp::Div {
                if let (Operand::Const(_), Operand::Const(d)) = (a, b) {
                    if d.as_int() == Some(0) {
                        sink.inst(id, "division by the constant 0");
                    }
                }
            }
        }
        Op::Load(a) => {
            deref(a, "load", sink);
        }
        Op::Store { value, addr } => {
            if let Some(pt) = deref(addr, "store", sink) {
                if !accepts(&pt, &ty(value)) {
                    sink.inst(id, format!("cannot store `{}` into `{pt}`", describe(value)));
                }
            }
        }
        Op::Field { base, index } => match known(base).and_then(|t| t.pointee()) {
            Some(Type::Struct(name)) => match p.struct_def(&name) {
                Some(def) if (*index as usize) < def.fields.len() => {}
                Some(_) => sink.inst(id, format!("struct `{name}` has no field {index}")),
                None => {}
            },
            Some(other) => sink.inst(id, format!("`field` on pointer to non-struct `{other}`")),
            None if known(base).is_some() => sink.inst(id, "`field` base is not a pointer"),
            None => {}
        },
        Op::Index { base, index } => {
            if let Some(t) = known(base) {
                if t.pointee().is_none() {
                    sink.inst(id, format!("`index` base is not a pointer: `{t}`"));
                }
            }
            if let Some(t) = known(index) {
                if !t.is_numeric() {
                    sink.inst(id, format!("`index` offset must be numeric, found `{t}`"));
                }
            }
        }
        Op::Call { callee, args } => match callee_signature(p, callee) {
            None => sink.inst(id, format!("unknown function `@{callee}`")),
            Some((params, ret)) => {
                if params.len() != args.len() {
                    sink.inst(id, format!("`@{callee}` takes {} arguments, {} given", params.len(), args.len()));
                } else {
                    for (i, (pt, a)) in params.iter().zip(args).enumerate() {
                        if !accepts(pt, &ty(a)) {
                            sink.inst(id, format!("argument {i} of `@{callee}`: expected `{pt}`, found `{}`", describe(a)));
                        }
                    }
                }
                if result.is_some() && ret.is_none() {
                    sink.inst(id, format!("`@{callee}` returns no value"));
                }
            }
        },
        Op::ICall { ret, callee, .. } => {
            if let Some(t) = known(callee) {
                if t != Type::FnPtr {
                    sink.inst(id, format!("`icall` through `{t}`"));
                }
            }
            if result.is_some() != ret.is_some() {
                sink.inst(id, "`icall` return type annotation must accompany a result register");
            }
        }
        Op::FuncAddr(target) => {
            if p.function(target).is_none() {
                sink.inst(id, format!("unknown function `@{target}`"));
            }
        }
        Op::Cbr { cond, .. } => match ty(cond) {
            OperandTy::Known(t) if !t.is_numeric() => sink.inst(id, format!("branch condition has type `{t}`")),
            OperandTy::Null => sink.inst(id, "branch on null"),
            _ => {}
        },
        Op::Ret(v) => match (&f.ret, v) {
            (None, None) => {}
            (None, Some(_)) => sink.inst(id, "`ret` with a value in a function without a return type"),
            (Some(_), None) => sink.inst(id, "`ret` without a value"),
            (Some(rt), Some(v)) => {
                if !accepts(rt, &ty(v)) {
                    sink.inst(id, format!("returning `{}` from a function returning `{rt}`", describe(v)));
                }
            }
        },
    }

    if let Some(r) = result {
        if env.get(r).is_none() && !matches!(op, Op::Call { .. } | Op::ICall { .. }) {
            sink.inst(id, format!("cannot infer a type for `%{r}`"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    fn diags(src: &str) -> Vec<Diagnostic> {
        validate(&parse_program(src).unwrap())
    }

    const MAIN: &str = "fn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\n";

    #[test]
    fn well_formed_program() {
        let src = format!(
            "struct S {{ byte, int }}\nglobal @g : int = 7\n{MAIN}entry:\n  %s = alloca struct S\n  %f = field %s, 1\n  store 3, %f\n  %v = load %f\n  %w = load @g\n  %x = add %v, %w\n  cbr %x, a, b\na:\n  ret %x\nb:\n  ret 0\n}}\n"
        );
        assert_eq!(diags(&src), vec![]);
    }

    #[test]
    fn missing_terminator_names_block() {
        let d = diags(&format!("{MAIN}entry:\n  %a = const 1\n}}\n"));
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].subject, Subject::Entity("@main:entry".into()));
    }

    #[test]
    fn use_before_assignment_names_inst() {
        let src = format!("{MAIN}entry:\n  %c = const 1\n  cbr %c, a, b\na:\n  %x = const 2\n  br j\nb:\n  br j\nj:\n  ret %x\n}}\n");
        let d = diags(&src);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].subject, Subject::Inst(InstId(5)));
    }

    #[test]
    fn literal_division_by_zero() {
        let d = diags(&format!("{MAIN}entry:\n  %a = div 1, 0\n  ret %a\n}}\n"));
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("division"));
        // A register divisor is a runtime matter.
        let d = diags(&format!("{MAIN}entry:\n  %z = const 0\n  %a = div 1, %z\n  ret %a\n}}\n"));
        assert!(d.is_empty(), "{d:?}");
    }

    #[test]
    fn type_errors() {
        let d = diags(&format!("{MAIN}entry:\n  %a = alloca int\n  store %argv, %a\n  ret 0\n}}\n"));
        assert_eq!(d.len(), 1, "{d:?}");
        let d = diags(&format!("{MAIN}entry:\n  %a = load %argc\n  ret 0\n}}\n"));
        assert!(!d.is_empty());
        let d = diags(&format!("{MAIN}entry:\n  call @print_int, %argv\n  ret 0\n}}\n"));
        assert_eq!(d.len(), 1, "{d:?}");
    }

    #[test]
    fn recursive_struct_rejected() {
        let d = diags("struct A { int, struct B }\nstruct B { struct A }\nstruct C { ptr<struct C> }\n");
        assert_eq!(d.len(), 2, "{d:?}");
    }

    #[test]
    fn entry_with_predecessor_and_two_necks() {
        let d = diags(&format!("{MAIN}entry:\n  neckmark\n  neckmark\n  br entry\n}}\n"));
        assert_eq!(d.len(), 2, "{d:?}");
    }

    #[test]
    fn global_initializers() {
        let d = diags("global @a : int = \"x\"\nglobal @b : arr<byte, 3> = \"abc\"\nglobal @c : arr<byte, 4> = \"abc\"\nglobal @d : ptr<int> = null\n");
        assert_eq!(d.len(), 2, "{d:?}");
    }

    #[test]
    fn bad_main_signature() {
        let d = diags("fn @main() {\nentry:\n  ret\n}\n");
        assert_eq!(d.len(), 1);
    }
}
