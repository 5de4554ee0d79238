//! Concrete interpreter. Full mode runs a program to completion; partial
//! mode runs the single path from `main` to the neck marker and captures
//! the machine state there.

mod state;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Serialize, Serializer};

pub use state::{CapturedVar, Excluded, PartialState, StatePath};

use crate::ir::{
    escape_bytes, field_offset, flatten, infer_types, size_of, BinOp, CellKind, ConstValue, Function, Initializer,
    InstId, Intrinsic, Op, Operand, Program, StructDef, Type, TypeEnv,
};

pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000;
const MAX_CALL_DEPTH: usize = 10_000;
/// `argv[0]` handed to every run.
pub const PROGRAM_NAME: &str = "prog";

fn ser_opt_bytes<S: Serializer>(b: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
    match b {
        Some(b) => s.serialize_some(&escape_bytes(b)),
        None => s.serialize_none(),
    }
}

/// Inputs of one run. `stdin: None` means stdin is delayed (not available).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Invocation {
    pub args: Vec<String>,
    #[serde(serialize_with = "ser_opt_bytes")]
    pub stdin: Option<Vec<u8>>,
    /// Contents served by `read_cfg_line`.
    #[serde(serialize_with = "ser_opt_bytes")]
    pub config: Option<Vec<u8>>,
    pub step_budget: u64,
}

impl Invocation {
    /// Supplied arguments only; stdin delayed.
    pub fn supplied(args: &[String]) -> Invocation {
        Invocation { args: args.to_vec(), stdin: None, config: None, step_budget: DEFAULT_STEP_BUDGET }
    }

    pub fn with_stdin(args: &[String], stdin: &[u8]) -> Invocation {
        Invocation { stdin: Some(stdin.to_vec()), ..Invocation::supplied(args) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum TrapKind {
    DivByZero,
    OutOfBounds,
    UndefBranch,
    BudgetExceeded,
    BadIndirectCall,
    NullDeref,
    UndefValue,
    WriteToReadOnly,
    StackOverflow,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, thiserror::Error)]
#[serde(rename_all = "camelCase")]
#[error("{kind:?} at {at}")]
pub struct Trap {
    pub kind: TrapKind,
    pub at: InstId,
}

/// How a full run ended.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum ExitStatus {
    Code(i32),
    Trap(Trap),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunOutcome {
    #[serde(serialize_with = "ser_bytes")]
    pub stdout: Vec<u8>,
    pub exit_status: ExitStatus,
    pub steps: u64,
    pub neck_crossings: u32,
}

fn ser_bytes<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&escape_bytes(b))
}

impl RunOutcome {
    /// Behavioural equality: stdout bytes plus exit code, traps by kind.
    pub fn same_behaviour(&self, other: &RunOutcome) -> bool {
        self.stdout == other.stdout
            && match (&self.exit_status, &other.exit_status) {
                (ExitStatus::Code(a), ExitStatus::Code(b)) => a == b,
                (ExitStatus::Trap(a), ExitStatus::Trap(b)) => a.kind == b.kind,
                _ => false,
            }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum InterpError {
    #[error("program has no main function")]
    NoMain,
    #[error("program has no neck marker")]
    NoNeck,
    #[error("program returned before reaching the neck")]
    NeckNotReached,
    #[error("delayed input read at {0} before the neck")]
    DelayedInputBeforeNeck(InstId),
    #[error("trap before the neck: {0}")]
    Trap(Trap),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionId(pub u32);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Byte(u8),
    Ptr { region: RegionId, offset: i64 },
    Null,
    Func(String),
    Undef,
}

impl Value {
    fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            Value::Byte(b) => Some(*b as i64),
            _ => None,
        }
    }

    fn convert_to(self, kind: CellKind) -> Value {
        match (kind, self) {
            (CellKind::Int, Value::Byte(b)) => Value::Int(b as i64),
            (CellKind::Byte, Value::Int(v)) => Value::Byte(v as u8),
            (_, v) => v,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Byte(b) => write!(f, "{b}b"),
            Value::Ptr { region, offset } => write!(f, "&r{}+{offset}", region.0),
            Value::Null => f.write_str("null"),
            Value::Func(n) => write!(f, "@{n}"),
            Value::Undef => f.write_str("undef"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RegionKind {
    Global(String),
    Stack { function: String, alloca: InstId },
    Heap(InstId),
    ArgvArray,
    ArgvString(usize),
    Rodata,
}

#[derive(Clone, Debug)]
pub struct Region {
    pub kind: RegionKind,
    pub ty: Option<Type>,
    pub kinds: Vec<CellKind>,
    pub cells: Vec<Value>,
    pub read_only: bool,
}

#[derive(Clone, Debug)]
struct Frame<'p> {
    func: &'p Function,
    block: usize,
    pc: usize,
    regs: HashMap<&'p str, Value>,
    /// Stack slots created in this frame, latest execution per alloca last.
    slots: Vec<(InstId, RegionId)>,
    ret_to: Option<&'p str>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Full,
    Partial,
}

enum Fault {
    Trap(Trap),
    DelayedInput(InstId),
}

impl From<Trap> for Fault {
    fn from(t: Trap) -> Self {
        Fault::Trap(t)
    }
}

enum Stop {
    Exited(i32),
    AtNeck(InstId),
}

struct Input {
    data: Option<Vec<u8>>,
    cursor: usize,
}

impl Input {
    /// Reads one line of at most `max` bytes (including the newline).
    fn read_line(&mut self, max: usize) -> Option<Vec<u8>> {
        let data = self.data.as_ref()?;
        let rest = &data[self.cursor.min(data.len())..];
        let mut n = 0;
        while n < rest.len() && n < max {
            n += 1;
            if rest[n - 1] == b'\n' {
                break;
            }
        }
        self.cursor += n;
        Some(rest[..n].to_vec())
    }
}

pub struct Machine<'p> {
    prog: &'p Program,
    envs: HashMap<&'p str, TypeEnv>,
    structs: HashMap<&'p str, &'p StructDef>,
    regions: Vec<Region>,
    globals: HashMap<&'p str, RegionId>,
    rodata: HashMap<Vec<u8>, RegionId>,
    frames: Vec<Frame<'p>>,
    stdout: Vec<u8>,
    stdin: Input,
    config: Input,
    steps: u64,
    budget: u64,
    mode: Mode,
    visited: BTreeSet<String>,
    neck_crossings: u32,
    trace: Option<Vec<InstId>>,
    exit: Option<i32>,
}

impl<'p> Machine<'p> {
    fn new(prog: &'p Program, inv: &Invocation, mode: Mode, trace: bool) -> Result<Machine<'p>, InterpError> {
        let main = prog.function("main").ok_or(InterpError::NoMain)?;
        let mut m = Machine {
            prog,
            envs: prog.functions.iter().map(|f| (f.name.as_str(), infer_types(prog, f))).collect(),
            structs: prog.struct_map(),
            regions: Vec::new(),
            globals: HashMap::new(),
            rodata: HashMap::new(),
            frames: Vec::new(),
            stdout: Vec::new(),
            stdin: Input { data: inv.stdin.clone(), cursor: 0 },
            config: Input { data: inv.config.clone(), cursor: 0 },
            steps: 0,
            budget: inv.step_budget,
            mode,
            visited: BTreeSet::new(),
            neck_crossings: 0,
            trace: trace.then(Vec::new),
            exit: None,
        };
        for g in &prog.globals {
            let kinds = flatten(&g.ty, &m.structs);
            let cells = match &g.init {
                Initializer::Zero => kinds.iter().map(|k| zero_of(*k)).collect(),
                Initializer::Const(ConstValue::Str(bytes)) => {
                    let mut cells: Vec<Value> = kinds.iter().map(|k| zero_of(*k)).collect();
                    for (c, b) in cells.iter_mut().zip(bytes) {
                        *c = Value::Byte(*b);
                    }
                    cells
                }
                Initializer::Const(c) => {
                    let mut cells: Vec<Value> = kinds.iter().map(|k| zero_of(*k)).collect();
                    if let Some(first) = cells.first_mut() {
                        *first = m.const_value(c).convert_to(kinds[0]);
                    }
                    cells
                }
            };
            let id = m.add_region(RegionKind::Global(g.name.clone()), Some(g.ty.clone()), kinds, cells, false);
            m.globals.insert(&g.name, id);
        }

        let mut argv_ptrs = Vec::new();
        let all_args: Vec<&str> = std::iter::once(PROGRAM_NAME).chain(inv.args.iter().map(String::as_str)).collect();
        for (i, a) in all_args.iter().enumerate() {
            let mut bytes = a.as_bytes().to_vec();
            bytes.push(0);
            let id = m.add_region(
                RegionKind::ArgvString(i),
                None,
                vec![CellKind::Byte; bytes.len()],
                bytes.into_iter().map(Value::Byte).collect(),
                true,
            );
            argv_ptrs.push(Value::Ptr { region: id, offset: 0 });
        }
        argv_ptrs.push(Value::Null);
        let argv = m.add_region(RegionKind::ArgvArray, None, vec![CellKind::Ptr; argv_ptrs.len()], argv_ptrs, true);

        let args = [Value::Int(all_args.len() as i64), Value::Ptr { region: argv, offset: 0 }];
        let mut regs = HashMap::new();
        for (p, v) in main.params.iter().zip(args) {
            regs.insert(p.name.as_str(), v);
        }
        m.frames.push(Frame { func: main, block: 0, pc: 0, regs, slots: Vec::new(), ret_to: None });
        Ok(m)
    }

    fn add_region(
        &mut self,
        kind: RegionKind,
        ty: Option<Type>,
        kinds: Vec<CellKind>,
        cells: Vec<Value>,
        read_only: bool,
    ) -> RegionId {
        let id = RegionId(self.regions.len() as u32);
        self.regions.push(Region { kind, ty, kinds, cells, read_only });
        id
    }

    fn intern(&mut self, bytes: &[u8]) -> RegionId {
        if let Some(&id) = self.rodata.get(bytes) {
            return id;
        }
        let mut cells: Vec<Value> = bytes.iter().map(|&b| Value::Byte(b)).collect();
        cells.push(Value::Byte(0));
        let id = self.add_region(RegionKind::Rodata, None, vec![CellKind::Byte; cells.len()], cells, true);
        self.rodata.insert(bytes.to_vec(), id);
        id
    }

    fn const_value(&mut self, c: &ConstValue) -> Value {
        match c {
            ConstValue::Int(v) => Value::Int(*v),
            ConstValue::Byte(b) => Value::Byte(*b),
            ConstValue::Null => Value::Null,
            ConstValue::Str(s) => Value::Ptr { region: self.intern(s), offset: 0 },
        }
    }

    fn operand(&mut self, o: &Operand, at: InstId) -> Result<Value, Trap> {
        Ok(match o {
            Operand::Const(c) => self.const_value(c),
            Operand::Global(g) => Value::Ptr { region: self.globals[g.as_str()], offset: 0 },
            Operand::Reg(r) => self
                .frames
                .last()
                .and_then(|f| f.regs.get(r.as_str()).cloned())
                .ok_or(Trap { kind: TrapKind::UndefValue, at })?,
        })
    }

    fn int_operand(&mut self, o: &Operand, at: InstId) -> Result<i64, Trap> {
        self.operand(o, at)?.as_int().ok_or(Trap { kind: TrapKind::UndefValue, at })
    }

    fn cell(&self, ptr: &Value, at: InstId) -> Result<(RegionId, usize), Trap> {
        match ptr {
            Value::Ptr { region, offset } => {
                let r = &self.regions[region.0 as usize];
                if *offset < 0 || *offset as usize >= r.cells.len() {
                    return Err(Trap { kind: TrapKind::OutOfBounds, at });
                }
                Ok((*region, *offset as usize))
            }
            Value::Null => Err(Trap { kind: TrapKind::NullDeref, at }),
            _ => Err(Trap { kind: TrapKind::UndefValue, at }),
        }
    }

    fn load(&self, ptr: &Value, at: InstId) -> Result<Value, Trap> {
        let (r, o) = self.cell(ptr, at)?;
        Ok(self.regions[r.0 as usize].cells[o].clone())
    }

    fn store(&mut self, ptr: &Value, v: Value, at: InstId) -> Result<(), Trap> {
        let (r, o) = self.cell(ptr, at)?;
        let region = &mut self.regions[r.0 as usize];
        if region.read_only {
            return Err(Trap { kind: TrapKind::WriteToReadOnly, at });
        }
        region.cells[o] = v.convert_to(region.kinds[o]);
        Ok(())
    }

    /// NUL-terminated byte string starting at `ptr`.
    fn read_cstr(&self, ptr: &Value, at: InstId) -> Result<Vec<u8>, Trap> {
        let mut out = Vec::new();
        let Value::Ptr { region, offset } = ptr else {
            self.cell(ptr, at)?;
            unreachable!("cell() rejects non-pointers");
        };
        let mut off = *offset;
        loop {
            let v = self.load(&Value::Ptr { region: *region, offset: off }, at)?;
            match v.as_int() {
                Some(0) => return Ok(out),
                Some(b) => out.push(b as u8),
                None => return Err(Trap { kind: TrapKind::UndefValue, at }),
            }
            off += 1;
        }
    }

    fn static_type(&self, func: &str, o: &Operand) -> Option<Type> {
        self.envs.get(func).and_then(|env| env.operand_type(self.prog, o))
    }

    fn run(&mut self) -> Result<Stop, Fault> {
        loop {
            if let Some(code) = self.exit {
                return Ok(Stop::Exited(code));
            }
            let frame = self.frames.last().expect("active frame");
            let func = frame.func;
            let inst = &func.blocks[frame.block].insts[frame.pc];
            let at = inst.id;
            if self.steps >= self.budget {
                return Err(Trap { kind: TrapKind::BudgetExceeded, at }.into());
            }
            self.steps += 1;
            self.visited.insert(func.name.clone());
            if let Some(t) = &mut self.trace {
                t.push(at);
            }
            self.frames.last_mut().expect("frame").pc += 1;

            let result: Option<Value> = match &inst.op {
                Op::NeckMark => {
                    self.neck_crossings += 1;
                    if self.mode == Mode::Partial {
                        return Ok(Stop::AtNeck(at));
                    }
                    None
                }
                Op::Const(c) => Some(self.const_value(c)),
                Op::Bin(op, a, b) => Some(self.binop(*op, a, b, at)?),
                Op::Alloca(t) => {
                    let kinds = flatten(t, &self.structs);
                    let cells = vec![Value::Undef; kinds.len()];
                    let kind = RegionKind::Stack { function: func.name.clone(), alloca: at };
                    let id = self.add_region(kind, Some(t.clone()), kinds, cells, false);
                    self.frames.last_mut().expect("frame").slots.push((at, id));
                    Some(Value::Ptr { region: id, offset: 0 })
                }
                Op::Heap(t) => {
                    let kinds = flatten(t, &self.structs);
                    let cells = vec![Value::Undef; kinds.len()];
                    let id = self.add_region(RegionKind::Heap(at), Some(t.clone()), kinds, cells, false);
                    Some(Value::Ptr { region: id, offset: 0 })
                }
                Op::Load(a) => {
                    let p = self.operand(a, at)?;
                    Some(self.load(&p, at)?)
                }
                Op::Store { value, addr } => {
                    let v = self.operand(value, at)?;
                    let p = self.operand(addr, at)?;
                    self.store(&p, v, at)?;
                    None
                }
                Op::Field { base, index } => {
                    let p = self.operand(base, at)?;
                    let off = match self.static_type(&func.name, base).and_then(|t| t.pointee()) {
                        Some(Type::Struct(name)) => field_offset(&name, *index, &self.structs),
                        _ => None,
                    }
                    .ok_or(Trap { kind: TrapKind::UndefValue, at })?;
                    Some(offset_ptr(p, off as i64, at)?)
                }
                Op::Index { base, index } => {
                    let p = self.operand(base, at)?;
                    let i = self.int_operand(index, at)?;
                    let elem = match self.static_type(&func.name, base) {
                        Some(Type::Ptr(inner)) => match *inner {
                            Type::Arr(elem, _) => size_of(&elem, &self.structs),
                            other => size_of(&other, &self.structs),
                        },
                        _ => 1,
                    };
                    Some(offset_ptr(p, i.wrapping_mul(elem as i64), at)?)
                }
                Op::Call { callee, args } => {
                    let vals = args.iter().map(|a| self.operand(a, at)).collect::<Result<Vec<_>, _>>()?;
                    if let Some(intr) = Intrinsic::from_name(callee) {
                        self.intrinsic(intr, &vals, at)?
                    } else {
                        let target = self.prog.function(callee).expect("validated callee");
                        self.enter(target, vals, inst.result.as_deref(), at)?;
                        continue;
                    }
                }
                Op::ICall { callee, args, .. } => {
                    let target = match self.operand(callee, at)? {
                        Value::Func(name) => self.prog.function(&name),
                        _ => None,
                    };
                    let target = target
                        .filter(|f| f.params.len() == args.len())
                        .ok_or(Trap { kind: TrapKind::BadIndirectCall, at })?;
                    let vals = args.iter().map(|a| self.operand(a, at)).collect::<Result<Vec<_>, _>>()?;
                    self.enter(target, vals, inst.result.as_deref(), at)?;
                    continue;
                }
                Op::FuncAddr(f) => Some(Value::Func(f.clone())),
                Op::Br(l) => {
                    self.jump(l);
                    None
                }
                Op::Cbr { cond, then_to, else_to } => {
                    let taken = match self.operand(cond, at)? {
                        Value::Int(v) => v != 0,
                        Value::Byte(b) => b != 0,
                        Value::Ptr { .. } | Value::Func(_) => true,
                        Value::Null => false,
                        Value::Undef => return Err(Trap { kind: TrapKind::UndefBranch, at }.into()),
                    };
                    self.jump(if taken { then_to } else { else_to });
                    None
                }
                Op::Ret(v) => {
                    let v = match v {
                        Some(o) => Some(self.operand(o, at)?),
                        None => None,
                    };
                    self.ret(v, at)?;
                    continue;
                }
            };
            if let (Some(r), Some(v)) = (&inst.result, result) {
                self.frames.last_mut().expect("frame").regs.insert(r.as_str(), v);
            }
        }
    }

    fn jump(&mut self, label: &str) {
        let frame = self.frames.last_mut().expect("frame");
        frame.block = frame.func.block_index(label).expect("validated label");
        frame.pc = 0;
    }

    fn enter(&mut self, f: &'p Function, args: Vec<Value>, ret_to: Option<&'p str>, at: InstId) -> Result<(), Trap> {
        if self.frames.len() >= MAX_CALL_DEPTH {
            return Err(Trap { kind: TrapKind::StackOverflow, at });
        }
        let regs = f.params.iter().map(|p| p.name.as_str()).zip(args).collect();
        self.frames.push(Frame { func: f, block: 0, pc: 0, regs, slots: Vec::new(), ret_to });
        Ok(())
    }

    fn ret(&mut self, v: Option<Value>, at: InstId) -> Result<(), Fault> {
        let frame = self.frames.pop().expect("frame");
        if self.frames.is_empty() {
            let code = match v {
                None => 0,
                Some(v) => v.as_int().ok_or(Trap { kind: TrapKind::UndefValue, at })? & 0xff,
            };
            self.exit = Some(code as i32);
            return Ok(());
        }
        if let Some(r) = frame.ret_to {
            self.frames.last_mut().expect("caller").regs.insert(r, v.unwrap_or(Value::Undef));
        }
        Ok(())
    }

    fn binop(&mut self, op: BinOp, a: &Operand, b: &Operand, at: InstId) -> Result<Value, Trap> {
        let x = self.operand(a, at)?;
        let y = self.operand(b, at)?;
        if matches!(x, Value::Undef) || matches!(y, Value::Undef) {
            return Ok(Value::Undef);
        }
        if let (Some(x), Some(y)) = (x.as_int(), y.as_int()) {
            return op
                .eval(x, y)
                .map(Value::Int)
                .ok_or(Trap { kind: TrapKind::DivByZero, at });
        }
        let r = match op {
            BinOp::Eq => x == y,
            BinOp::Ne => x != y,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => match (&x, &y) {
                (Value::Ptr { region: r1, offset: o1 }, Value::Ptr { region: r2, offset: o2 }) if r1 == r2 => {
                    op.eval(*o1, *o2) == Some(1)
                }
                _ => return Err(Trap { kind: TrapKind::UndefValue, at }),
            },
            _ => return Err(Trap { kind: TrapKind::UndefValue, at }),
        };
        Ok(Value::Int(r as i64))
    }

    fn intrinsic(&mut self, intr: Intrinsic, args: &[Value], at: InstId) -> Result<Option<Value>, Fault> {
        let int = |v: &Value| v.as_int().ok_or(Trap { kind: TrapKind::UndefValue, at });
        Ok(match intr {
            Intrinsic::PrintInt => {
                let v = int(&args[0])?;
                self.stdout.extend_from_slice(v.to_string().as_bytes());
                None
            }
            Intrinsic::PrintStr => {
                let s = self.read_cstr(&args[0], at)?;
                self.stdout.extend_from_slice(&s);
                None
            }
            Intrinsic::StrEq => {
                let a = self.read_cstr(&args[0], at)?;
                let b = self.read_cstr(&args[1], at)?;
                Some(Value::Int((a == b) as i64))
            }
            Intrinsic::Atoi => Some(Value::Int(atoi(&self.read_cstr(&args[0], at)?))),
            Intrinsic::ReadLine | Intrinsic::ReadCfgLine => {
                let n = int(&args[1])?;
                let input = if intr == Intrinsic::ReadLine { &mut self.stdin } else { &mut self.config };
                if input.data.is_none() && self.mode == Mode::Partial {
                    return Err(Fault::DelayedInput(at));
                }
                if n <= 0 {
                    return Ok(Some(Value::Int(0)));
                }
                let line = input.read_line((n - 1) as usize).unwrap_or_default();
                let Value::Ptr { region, offset } = args[0].clone() else {
                    self.cell(&args[0], at)?;
                    unreachable!("cell() rejects non-pointers");
                };
                for (i, b) in line.iter().chain(std::iter::once(&0u8)).enumerate() {
                    self.store(&Value::Ptr { region, offset: offset + i as i64 }, Value::Byte(*b), at)?;
                }
                Some(Value::Int(line.len() as i64))
            }
        })
    }
}

fn zero_of(kind: CellKind) -> Value {
    match kind {
        CellKind::Int => Value::Int(0),
        CellKind::Byte => Value::Byte(0),
        CellKind::Ptr => Value::Null,
    }
}

fn offset_ptr(p: Value, by: i64, at: InstId) -> Result<Value, Trap> {
    match p {
        Value::Ptr { region, offset } => Ok(Value::Ptr { region, offset: offset.wrapping_add(by) }),
        Value::Null => Err(Trap { kind: TrapKind::NullDeref, at }),
        _ => Err(Trap { kind: TrapKind::UndefValue, at }),
    }
}

/// C-style `atoi`: optional sign, then leading decimal digits.
fn atoi(s: &[u8]) -> i64 {
    let mut i = 0;
    while i < s.len() && s[i].is_ascii_whitespace() {
        i += 1;
    }
    let neg = match s.get(i) {
        Some(b'-') => {
            i += 1;
            true
        }
        Some(b'+') => {
            i += 1;
            false
        }
        _ => false,
    };
    let mut v: i64 = 0;
    while let Some(d) = s.get(i).filter(|d| d.is_ascii_digit()) {
        v = v.wrapping_mul(10).wrapping_add((d - b'0') as i64);
        i += 1;
    }
    if neg {
        v.wrapping_neg()
    } else {
        v
    }
}

fn outcome(m: &Machine, status: ExitStatus) -> RunOutcome {
    RunOutcome { stdout: m.stdout.clone(), exit_status: status, steps: m.steps, neck_crossings: m.neck_crossings }
}

fn finish_full(m: &mut Machine) -> RunOutcome {
    match m.run() {
        Ok(Stop::Exited(code)) => outcome(m, ExitStatus::Code(code)),
        Ok(Stop::AtNeck(_)) => unreachable!("full mode never stops at the neck"),
        Err(Fault::Trap(t)) => outcome(m, ExitStatus::Trap(t)),
        // Full mode treats missing input as end of file.
        Err(Fault::DelayedInput(_)) => unreachable!("full mode never defers input"),
    }
}

/// Runs `main` to completion. Traps are reported in the outcome.
pub fn run_full(p: &Program, inv: &Invocation) -> Result<RunOutcome, InterpError> {
    let mut m = Machine::new(p, inv, Mode::Full, false)?;
    Ok(finish_full(&mut m))
}

/// Like [`run_full`] but also returns the executed instruction ids.
pub fn run_full_traced(p: &Program, inv: &Invocation) -> Result<(RunOutcome, Vec<InstId>), InterpError> {
    let mut m = Machine::new(p, inv, Mode::Full, true)?;
    let out = finish_full(&mut m);
    Ok((out, m.trace.take().unwrap_or_default()))
}

/// Runs from `main` to the neck marker with the supplied inputs and
/// captures the state there. `inv.stdin` is ignored (always delayed).
pub fn run_to_neck(p: &Program, inv: &Invocation) -> Result<PartialState, InterpError> {
    run_to_neck_traced(p, inv).map(|(s, _)| s)
}

pub fn run_to_neck_traced(p: &Program, inv: &Invocation) -> Result<(PartialState, Vec<InstId>), InterpError> {
    let neck = p.neck().ok_or(InterpError::NoNeck)?;
    let inv = Invocation { stdin: None, ..inv.clone() };
    let mut m = Machine::new(p, &inv, Mode::Partial, true)?;
    match m.run() {
        Ok(Stop::AtNeck(at)) => {
            debug_assert_eq!(at, neck);
            let st = state::capture_state(&m, neck);
            Ok((st, m.trace.take().unwrap_or_default()))
        }
        Ok(Stop::Exited(_)) => Err(InterpError::NeckNotReached),
        Err(Fault::Trap(t)) => Err(InterpError::Trap(t)),
        Err(Fault::DelayedInput(at)) => Err(InterpError::DelayedInputBeforeNeck(at)),
    }
}

/// Runs `p` to its neck and checks it against a previously captured state:
/// every captured path must still hold its value, and anything captured now
/// must agree with the earlier capture. Returns one message per mismatch.
pub fn verify_neck_state(p: &Program, inv: &Invocation, expected: &PartialState) -> Result<Vec<String>, InterpError> {
    let neck = p.neck().ok_or(InterpError::NoNeck)?;
    let inv = Invocation { stdin: None, ..inv.clone() };
    let mut m = Machine::new(p, &inv, Mode::Partial, false)?;
    match m.run() {
        Ok(Stop::AtNeck(_)) => {}
        Ok(Stop::Exited(_)) => return Err(InterpError::NeckNotReached),
        Err(Fault::Trap(t)) => return Err(InterpError::Trap(t)),
        Err(Fault::DelayedInput(at)) => return Err(InterpError::DelayedInputBeforeNeck(at)),
    }
    let mut problems = Vec::new();
    for e in &expected.entries {
        let now = state::read_path(&m, &e.path, matches!(e.value, ConstValue::Str(_)));
        if now.as_ref() != Some(&e.value) {
            let shown = now.map_or("nothing".to_string(), |v| v.to_string());
            problems.push(format!("{}: expected {}, found {shown}", e.label, e.value));
        }
    }
    let fresh = state::capture_state(&m, neck);
    for e in &fresh.entries {
        match expected.get(&e.path) {
            Some(old) if old.value == e.value => {}
            Some(old) => problems.push(format!("{}: captured {} but expected {}", e.label, e.value, old.value)),
            None => problems.push(format!("{}: captured {} but absent before", e.label, e.value)),
        }
    }
    if fresh.neck_crossings != 1 {
        problems.push(format!("neck crossed {} times", fresh.neck_crossings));
    }
    Ok(problems)
}
