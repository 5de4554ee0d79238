//! The load/store IR: data model, textual syntax, typing and validation.
//!
//! Locals live in stack slots created by `alloca` and are accessed through
//! `load`/`store`; registers are assigned once per function. Instruction ids
//! are handed out in source order at parse time and are never reused, so
//! passes and reports can refer to instructions across transformations.

mod layout;
mod parse;
mod print;
mod typeck;
mod validate;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use layout::{field_offset, flatten, size_of, CellKind};
pub use parse::{parse_program, parse_type, ParseError};
pub use print::{escape_bytes, print_program};
pub use typeck::{infer_types, is_compatible, TypeEnv};
pub use validate::{validate, Diagnostic, Subject};

/// Globally unique, stable instruction identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstId(pub u32);

impl fmt::Display for InstId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Type {
    Int,
    Byte,
    Ptr(Box<Type>),
    Arr(Box<Type>, u64),
    Struct(String),
    /// Pointer to immutable, NUL-terminated bytes.
    Str,
    /// Opaque function pointer produced by `funcaddr`.
    FnPtr,
}

impl Type {
    pub fn ptr(to: Type) -> Type {
        Type::Ptr(Box::new(to))
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Type::Int | Type::Byte)
    }

    pub fn is_pointer_like(&self) -> bool {
        matches!(self, Type::Ptr(_) | Type::Str | Type::FnPtr)
    }

    /// Scalars occupy a single memory cell and can be loaded or stored.
    pub fn is_scalar(&self) -> bool {
        !matches!(self, Type::Arr(..) | Type::Struct(_))
    }

    /// What a pointer of this type points at, if it can be dereferenced.
    pub fn pointee(&self) -> Option<Type> {
        match self {
            Type::Ptr(t) => Some((**t).clone()),
            Type::Str => Some(Type::Byte),
            _ => None,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Int => f.write_str("int"),
            Type::Byte => f.write_str("byte"),
            Type::Ptr(t) => write!(f, "ptr<{t}>"),
            Type::Arr(t, n) => write!(f, "arr<{t}, {n}>"),
            Type::Struct(name) => write!(f, "struct {name}"),
            Type::Str => f.write_str("str"),
            Type::FnPtr => f.write_str("fnptr"),
        }
    }
}

impl Serialize for Type {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Type {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_type(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstValue {
    Int(i64),
    Byte(u8),
    #[serde(with = "str_bytes")]
    Str(Vec<u8>),
    Null,
}

impl ConstValue {
    pub fn ty(&self) -> Type {
        match self {
            ConstValue::Int(_) => Type::Int,
            ConstValue::Byte(_) => Type::Byte,
            ConstValue::Str(_) => Type::Str,
            ConstValue::Null => Type::ptr(Type::Byte),
        }
    }

    /// Integer view of a numeric constant.
    pub fn as_int(&self) -> Option<i64> {
        match self {
            ConstValue::Int(v) => Some(*v),
            ConstValue::Byte(b) => Some(i64::from(*b)),
            _ => None,
        }
    }
}

impl fmt::Display for ConstValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstValue::Int(v) => write!(f, "{v}"),
            ConstValue::Byte(b) => write!(f, "{b}b"),
            ConstValue::Str(bytes) => write!(f, "\"{}\"", escape_bytes(bytes)),
            ConstValue::Null => f.write_str("null"),
        }
    }
}

/// JSON form of string constants: the IR escape syntax without quotes.
mod str_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::escape_bytes(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        super::parse::unescape(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl BinOp {
    pub const ALL: [BinOp; 10] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::Lt,
        BinOp::Le,
        BinOp::Gt,
        BinOp::Ge,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Eq => "eq",
            BinOp::Ne => "ne",
            BinOp::Lt => "lt",
            BinOp::Le => "le",
            BinOp::Gt => "gt",
            BinOp::Ge => "ge",
        }
    }

    pub fn is_comparison(self) -> bool {
        !matches!(self, BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div)
    }

    /// Integer semantics shared by the interpreter and the constant folder.
    /// `None` means the operation traps (division by zero).
    pub fn eval(self, a: i64, b: i64) -> Option<i64> {
        Some(match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => {
                if b == 0 {
                    return None;
                }
                a.wrapping_div(b)
            }
            BinOp::Eq => i64::from(a == b),
            BinOp::Ne => i64::from(a != b),
            BinOp::Lt => i64::from(a < b),
            BinOp::Le => i64::from(a <= b),
            BinOp::Gt => i64::from(a > b),
            BinOp::Ge => i64::from(a >= b),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(String),
    Const(ConstValue),
    /// Address of a global's storage.
    Global(String),
}

impl Operand {
    pub fn reg(&self) -> Option<&str> {
        match self {
            Operand::Reg(r) => Some(r),
            _ => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "%{r}"),
            Operand::Const(c) => write!(f, "{c}"),
            Operand::Global(g) => write!(f, "@{g}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Const(ConstValue),
    Bin(BinOp, Operand, Operand),
    Alloca(Type),
    Heap(Type),
    Load(Operand),
    Store { value: Operand, addr: Operand },
    Field { base: Operand, index: u32 },
    Index { base: Operand, index: Operand },
    Call { callee: String, args: Vec<Operand> },
    ICall { ret: Option<Type>, callee: Operand, args: Vec<Operand> },
    FuncAddr(String),
    Br(String),
    Cbr { cond: Operand, then_to: String, else_to: String },
    Ret(Option<Operand>),
    NeckMark,
}

impl Op {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Op::Const(_) => "const",
            Op::Bin(op, ..) => op.mnemonic(),
            Op::Alloca(_) => "alloca",
            Op::Heap(_) => "heap",
            Op::Load(_) => "load",
            Op::Store { .. } => "store",
            Op::Field { .. } => "field",
            Op::Index { .. } => "index",
            Op::Call { .. } => "call",
            Op::ICall { .. } => "icall",
            Op::FuncAddr(_) => "funcaddr",
            Op::Br(_) => "br",
            Op::Cbr { .. } => "cbr",
            Op::Ret(_) => "ret",
            Op::NeckMark => "neckmark",
        }
    }

    pub fn is_terminator(&self) -> bool {
        matches!(self, Op::Br(_) | Op::Cbr { .. } | Op::Ret(_))
    }

    pub fn successors(&self) -> Vec<&str> {
        match self {
            Op::Br(l) => vec![l.as_str()],
            Op::Cbr { then_to, else_to, .. } => vec![then_to.as_str(), else_to.as_str()],
            _ => Vec::new(),
        }
    }

    pub fn operands(&self) -> Vec<&Operand> {
        match self {
            Op::Const(_) | Op::Alloca(_) | Op::Heap(_) | Op::FuncAddr(_) | Op::Br(_) | Op::NeckMark => {
                Vec::new()
            }
            Op::Bin(_, a, b) => vec![a, b],
            Op::Load(a) => vec![a],
            Op::Store { value, addr } => vec![value, addr],
            Op::Field { base, .. } => vec![base],
            Op::Index { base, index } => vec![base, index],
            Op::Call { args, .. } => args.iter().collect(),
            Op::ICall { callee, args, .. } => std::iter::once(callee).chain(args.iter()).collect(),
            Op::Cbr { cond, .. } => vec![cond],
            Op::Ret(v) => v.iter().collect(),
        }
    }

    pub fn operands_mut(&mut self) -> Vec<&mut Operand> {
        match self {
            Op::Const(_) | Op::Alloca(_) | Op::Heap(_) | Op::FuncAddr(_) | Op::Br(_) | Op::NeckMark => {
                Vec::new()
            }
            Op::Bin(_, a, b) => vec![a, b],
            Op::Load(a) => vec![a],
            Op::Store { value, addr } => vec![value, addr],
            Op::Field { base, .. } => vec![base],
            Op::Index { base, index } => vec![base, index],
            Op::Call { args, .. } => args.iter_mut().collect(),
            Op::ICall { callee, args, .. } => std::iter::once(callee).chain(args.iter_mut()).collect(),
            Op::Cbr { cond, .. } => vec![cond],
            Op::Ret(v) => v.iter_mut().collect(),
        }
    }

    /// Functions referenced by name (direct callee or `funcaddr`).
    pub fn function_ref(&self) -> Option<&str> {
        match self {
            Op::Call { callee, .. } => Some(callee),
            Op::FuncAddr(f) => Some(f),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instruction {
    pub id: InstId,
    pub result: Option<String>,
    pub op: Op,
}

impl Instruction {
    pub fn new(id: InstId, result: Option<String>, op: Op) -> Self {
        Instruction { id, result, op }
    }

    pub fn uses_reg(&self, reg: &str) -> bool {
        self.op.operands().iter().any(|o| o.reg() == Some(reg))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub label: String,
    pub insts: Vec<Instruction>,
}

impl Block {
    pub fn terminator(&self) -> Option<&Instruction> {
        self.insts.last().filter(|i| i.op.is_terminator())
    }

    pub fn successors(&self) -> Vec<&str> {
        self.terminator().map(|t| t.op.successors()).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: Type,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Option<Type>,
    /// The first block is the entry block.
    pub blocks: Vec<Block>,
}

impl Function {
    pub fn entry(&self) -> Option<&Block> {
        self.blocks.first()
    }

    pub fn block(&self, label: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn insts(&self) -> impl Iterator<Item = &Instruction> {
        self.blocks.iter().flat_map(|b| b.insts.iter())
    }

    pub fn inst_count(&self) -> usize {
        self.blocks.iter().map(|b| b.insts.len()).sum()
    }

    /// `(block index, offset)` of an instruction.
    pub fn locate(&self, id: InstId) -> Option<(usize, usize)> {
        self.blocks.iter().enumerate().find_map(|(bi, b)| {
            b.insts.iter().position(|i| i.id == id).map(|off| (bi, off))
        })
    }

    pub fn inst(&self, id: InstId) -> Option<&Instruction> {
        self.locate(id).map(|(b, o)| &self.blocks[b].insts[o])
    }

    /// Instruction defining a register, if it is not a parameter.
    pub fn def_of(&self, reg: &str) -> Option<&Instruction> {
        self.insts().find(|i| i.result.as_deref() == Some(reg))
    }

    pub fn param_index(&self, reg: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == reg)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructDef {
    pub name: String,
    pub fields: Vec<Type>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Initializer {
    Const(ConstValue),
    Zero,
}

impl fmt::Display for Initializer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Initializer::Const(c) => write!(f, "{c}"),
            Initializer::Zero => f.write_str("zeroinit"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Global {
    pub name: String,
    pub ty: Type,
    pub init: Initializer,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Program {
    pub structs: Vec<StructDef>,
    pub globals: Vec<Global>,
    pub functions: Vec<Function>,
    /// Next unused instruction id; ids below it are never handed out again.
    pub next_id: u32,
}

/// Built-in callees implemented by the interpreter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Intrinsic {
    PrintInt,
    PrintStr,
    ReadLine,
    StrEq,
    Atoi,
    ReadCfgLine,
}

impl Intrinsic {
    pub const ALL: [Intrinsic; 6] = [
        Intrinsic::PrintInt,
        Intrinsic::PrintStr,
        Intrinsic::ReadLine,
        Intrinsic::StrEq,
        Intrinsic::Atoi,
        Intrinsic::ReadCfgLine,
    ];

    pub fn from_name(name: &str) -> Option<Intrinsic> {
        Intrinsic::ALL.into_iter().find(|i| i.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Intrinsic::PrintInt => "print_int",
            Intrinsic::PrintStr => "print_str",
            Intrinsic::ReadLine => "read_line",
            Intrinsic::StrEq => "str_eq",
            Intrinsic::Atoi => "atoi",
            Intrinsic::ReadCfgLine => "read_cfg_line",
        }
    }

    pub fn params(self) -> Vec<Type> {
        let bytes = || Type::ptr(Type::Byte);
        match self {
            Intrinsic::PrintInt => vec![Type::Int],
            Intrinsic::PrintStr | Intrinsic::Atoi => vec![bytes()],
            Intrinsic::ReadLine | Intrinsic::ReadCfgLine => vec![bytes(), Type::Int],
            Intrinsic::StrEq => vec![bytes(), bytes()],
        }
    }

    pub fn ret(self) -> Option<Type> {
        match self {
            Intrinsic::PrintInt | Intrinsic::PrintStr => None,
            _ => Some(Type::Int),
        }
    }

    /// Whether the intrinsic writes through its first argument.
    pub fn writes_memory(self) -> bool {
        matches!(self, Intrinsic::ReadLine | Intrinsic::ReadCfgLine)
    }

    /// No observable effect and no memory writes; removable when unused.
    pub fn is_pure(self) -> bool {
        matches!(self, Intrinsic::StrEq | Intrinsic::Atoi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EditError {
    #[error("unknown instruction id {0}")]
    UnknownInstId(InstId),
    #[error("program already contains a neck marker at {0}")]
    DuplicateNeck(InstId),
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut Function> {
        self.functions.iter_mut().find(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&Global> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn struct_def(&self, name: &str) -> Option<&StructDef> {
        self.structs.iter().find(|s| s.name == name)
    }

    pub fn struct_map(&self) -> HashMap<&str, &StructDef> {
        self.structs.iter().map(|s| (s.name.as_str(), s)).collect()
    }

    pub fn fresh_id(&mut self) -> InstId {
        let id = InstId(self.next_id);
        self.next_id += 1;
        id
    }

    pub fn insts(&self) -> impl Iterator<Item = &Instruction> {
        self.functions.iter().flat_map(|f| f.insts())
    }

    /// `(function index, block index, offset)` of an instruction.
    pub fn locate(&self, id: InstId) -> Option<(usize, usize, usize)> {
        self.functions
            .iter()
            .enumerate()
            .find_map(|(fi, f)| f.locate(id).map(|(b, o)| (fi, b, o)))
    }

    pub fn inst(&self, id: InstId) -> Option<&Instruction> {
        self.locate(id)
            .map(|(f, b, o)| &self.functions[f].blocks[b].insts[o])
    }

    pub fn inst_mut(&mut self, id: InstId) -> Option<&mut Instruction> {
        let (f, b, o) = self.locate(id)?;
        Some(&mut self.functions[f].blocks[b].insts[o])
    }

    /// Function that contains the given instruction.
    pub fn function_of(&self, id: InstId) -> Option<&Function> {
        self.locate(id).map(|(f, _, _)| &self.functions[f])
    }

    pub fn neck_marks(&self) -> Vec<InstId> {
        self.insts()
            .filter(|i| matches!(i.op, Op::NeckMark))
            .map(|i| i.id)
            .collect()
    }

    pub fn neck(&self) -> Option<InstId> {
        self.neck_marks().into_iter().next()
    }

    /// Returns a copy with a `neckmark` placed immediately before `at`.
    pub fn insert_neck_marker(&self, at: InstId) -> Result<Program, EditError> {
        if let Some(existing) = self.neck() {
            return Err(EditError::DuplicateNeck(existing));
        }
        let (f, b, o) = self.locate(at).ok_or(EditError::UnknownInstId(at))?;
        let mut out = self.clone();
        let id = out.fresh_id();
        out.functions[f].blocks[b]
            .insts
            .insert(o, Instruction::new(id, None, Op::NeckMark));
        Ok(out)
    }

    /// Equality ignoring instruction ids and the id counter.
    pub fn structurally_equal(&self, other: &Program) -> bool {
        fn strip(p: &Program) -> Program {
            let mut p = p.clone();
            p.next_id = 0;
            for f in &mut p.functions {
                for b in &mut f.blocks {
                    for i in &mut b.insts {
                        i.id = InstId(0);
                    }
                }
            }
            p
        }
        strip(self) == strip(other)
    }
}
