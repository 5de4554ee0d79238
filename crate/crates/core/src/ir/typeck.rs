//! Register type inference and the operand typing rules shared by the
//! validator and the interpreter.

use std::collections::HashMap;

use super::{BinOp, ConstValue, Function, Intrinsic, Op, Operand, Program, Type};

/// Static types of every register of one function.
#[derive(Clone, Debug, Default)]
pub struct TypeEnv {
    pub regs: HashMap<String, Type>,
}

/// Type of an operand; `None` for untyped `null` or unknown registers.
pub(crate) enum OperandTy {
    Known(Type),
    Null,
    Unknown,
}

impl TypeEnv {
    pub fn get(&self, reg: &str) -> Option<&Type> {
        self.regs.get(reg)
    }

    pub(crate) fn operand(&self, p: &Program, o: &Operand) -> OperandTy {
        match o {
            Operand::Reg(r) => self.regs.get(r).cloned().map_or(OperandTy::Unknown, OperandTy::Known),
            Operand::Const(ConstValue::Null) => OperandTy::Null,
            Operand::Const(c) => OperandTy::Known(c.ty()),
            Operand::Global(g) => p
                .global(g)
                .map_or(OperandTy::Unknown, |g| OperandTy::Known(Type::ptr(g.ty.clone()))),
        }
    }

    /// Static type of an operand when it is known.
    pub fn operand_type(&self, p: &Program, o: &Operand) -> Option<Type> {
        match self.operand(p, o) {
            OperandTy::Known(t) => Some(t),
            _ => None,
        }
    }
}

/// Whether a value of type `actual` may flow where `expected` is required.
/// Integers and bytes convert implicitly, `str` and `ptr<byte>` are
/// interchangeable, and pointers to arrays decay to element pointers.
pub fn is_compatible(expected: &Type, actual: &Type) -> bool {
    if expected == actual || (expected.is_numeric() && actual.is_numeric()) {
        return true;
    }
    let byte_ptr = |t: &Type| matches!(t, Type::Str) || matches!(t, Type::Ptr(b) if **b == Type::Byte);
    if byte_ptr(expected) && byte_ptr(actual) {
        return true;
    }
    match (expected, actual) {
        (Type::Ptr(e), Type::Ptr(a)) => matches!(&**a, Type::Arr(elem, _) if **elem == **e),
        (Type::Str, Type::Ptr(a)) => matches!(&**a, Type::Arr(elem, _) if **elem == Type::Byte),
        _ => false,
    }
}

pub(crate) fn accepts(expected: &Type, actual: &OperandTy) -> bool {
    match actual {
        OperandTy::Known(t) => is_compatible(expected, t),
        OperandTy::Null => expected.is_pointer_like(),
        OperandTy::Unknown => true,
    }
}

/// Signature of a direct callee: parameter types and return type.
pub(crate) fn callee_signature(p: &Program, name: &str) -> Option<(Vec<Type>, Option<Type>)> {
    if let Some(f) = p.function(name) {
        return Some((f.params.iter().map(|p| p.ty.clone()).collect(), f.ret.clone()));
    }
    Intrinsic::from_name(name).map(|i| (i.params(), i.ret()))
}

/// Result type of an instruction given the current environment.
pub(crate) fn result_type(p: &Program, env: &TypeEnv, op: &Op) -> Option<Type> {
    match op {
        Op::Const(c) => Some(c.ty()),
        Op::Bin(..) => Some(Type::Int),
        Op::Alloca(t) | Op::Heap(t) => Some(Type::ptr(t.clone())),
        Op::Load(a) => {
            let pointee = env.operand_type(p, a)?.pointee()?;
            pointee.is_scalar().then_some(pointee)
        }
        Op::Field { base, index } => match env.operand_type(p, base)?.pointee()? {
            Type::Struct(name) => {
                let def = p.struct_def(&name)?;
                def.fields.get(*index as usize).map(|t| Type::ptr(t.clone()))
            }
            _ => None,
        },
        Op::Index { base, .. } => match env.operand_type(p, base)? {
            Type::Str => Some(Type::ptr(Type::Byte)),
            Type::Ptr(inner) => match *inner {
                Type::Arr(elem, _) => Some(Type::Ptr(elem)),
                other => Some(Type::ptr(other)),
            },
            _ => None,
        },
        Op::Call { callee, .. } => callee_signature(p, callee)?.1,
        Op::ICall { ret, .. } => ret.clone(),
        Op::FuncAddr(_) => Some(Type::FnPtr),
        Op::Store { .. } | Op::Br(_) | Op::Cbr { .. } | Op::Ret(_) | Op::NeckMark => None,
    }
}

/// Infers register types to a fixed point. Registers whose type cannot be
/// determined are absent from the result; the validator reports them.
pub fn infer_types(p: &Program, f: &Function) -> TypeEnv {
    let mut env = TypeEnv::default();
    for param in &f.params {
        env.regs.insert(param.name.clone(), param.ty.clone());
    }
    loop {
        let mut changed = false;
        for inst in f.insts() {
            let Some(r) = &inst.result else { continue };
            if env.regs.contains_key(r) {
                continue;
            }
            if let Some(t) = result_type(p, &env, &inst.op) {
                env.regs.insert(r.clone(), t);
                changed = true;
            }
        }
        if !changed {
            return env;
        }
    }
}

pub(crate) fn is_comparison_on_pointers(op: BinOp) -> bool {
    matches!(op, BinOp::Eq | BinOp::Ne)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compatibility_rules() {
        let pb = Type::ptr(Type::Byte);
        assert!(is_compatible(&Type::Byte, &Type::Int));
        assert!(is_compatible(&pb, &Type::Str));
        assert!(is_compatible(&Type::Str, &pb));
        assert!(is_compatible(&pb, &Type::ptr(Type::Arr(Box::new(Type::Byte), 7))));
        assert!(!is_compatible(&Type::ptr(Type::Int), &pb));
        assert!(!is_compatible(&Type::Int, &pb));
    }
}
