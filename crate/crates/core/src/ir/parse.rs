//! Line-oriented parser for the textual IR. See `docs/ir-grammar.md`.

use std::collections::{HashMap, HashSet};

use super::{
    BinOp, Block, ConstValue, Function, Global, Initializer, InstId, Instruction, Intrinsic, Op,
    Operand, Param, Program, StructDef, Type,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("{line}: unresolved reference: {message}")]
    Resolution { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Reg(String),
    Global(String),
    Int(i64),
    Byte(u8),
    Str(Vec<u8>),
    Punct(char),
    Arrow,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Reg(s) => format!("`%{s}`"),
            Tok::Global(s) => format!("`@{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Byte(v) => format!("`{v}b`"),
            Tok::Str(_) => "string literal".into(),
            Tok::Punct(c) => format!("`{c}`"),
            Tok::Arrow => "`->`".into(),
        }
    }
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex_line(text: &str, line: usize) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let err = |col: usize, message: String| ParseError::Syntax { line, col: col + 1, message };
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && is_name_char(chars[i]) {
                i += 1;
            }
            toks.push((start, Tok::Ident(chars[start..i].iter().collect())));
            continue;
        }
        if c == '%' || c == '@' {
            i += 1;
            let name_start = i;
            while i < chars.len() && is_name_char(chars[i]) {
                i += 1;
            }
            if i == name_start {
                return Err(err(start, format!("expected a name after `{c}`")));
            }
            let name: String = chars[name_start..i].iter().collect();
            toks.push((start, if c == '%' { Tok::Reg(name) } else { Tok::Global(name) }));
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'>') {
            toks.push((start, Tok::Arrow));
            i += 2;
            continue;
        }
        if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let digits: String = chars[start..i].iter().collect();
            if chars.get(i) == Some(&'b') && !chars.get(i + 1).is_some_and(|&c| is_name_char(c)) {
                i += 1;
                let b: u8 = digits
                    .parse()
                    .map_err(|_| err(start, format!("byte literal `{digits}b` out of range")))?;
                toks.push((start, Tok::Byte(b)));
            } else {
                if chars.get(i).is_some_and(|&c| is_name_char(c)) {
                    return Err(err(i, "malformed number".into()));
                }
                let v: i64 = digits
                    .parse()
                    .map_err(|_| err(start, format!("integer literal `{digits}` out of range")))?;
                toks.push((start, Tok::Int(v)));
            }
            continue;
        }
        if c == '"' || c == '\'' {
            let quote = c;
            i += 1;
            let mut raw = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(err(start, "unterminated literal".into())),
                    Some('\\') => {
                        raw.push('\\');
                        if let Some(&n) = chars.get(i + 1) {
                            raw.push(n);
                        }
                        i += 2;
                    }
                    Some(&q) if q == quote => {
                        i += 1;
                        break;
                    }
                    Some(&other) => {
                        raw.push(other);
                        i += 1;
                    }
                }
            }
            let bytes = unescape(&raw).map_err(|m| err(start, m))?;
            if quote == '"' {
                toks.push((start, Tok::Str(bytes)));
            } else {
                if bytes.len() != 1 {
                    return Err(err(start, "character literal must be one byte".into()));
                }
                toks.push((start, Tok::Byte(bytes[0])));
            }
            continue;
        }
        if "{}()<>,:=".contains(c) {
            toks.push((start, Tok::Punct(c)));
            i += 1;
            continue;
        }
        return Err(err(start, format!("unexpected character `{c}`")));
    }
    Ok(toks)
}

/// Decodes the escape syntax used inside string literals.
pub(crate) fn unescape(raw: &str) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    let mut it = raw.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match it.next() {
            Some('n') => out.push(b'\n'),
            Some('t') => out.push(b'\t'),
            Some('r') => out.push(b'\r'),
            Some('0') => out.push(0),
            Some('\\') => out.push(b'\\'),
            Some('"') => out.push(b'"'),
            Some('\'') => out.push(b'\''),
            Some('x') => {
                let hex: String = it.by_ref().take(2).collect();
                let b = u8::from_str_radix(&hex, 16).map_err(|_| format!("bad escape `\\x{hex}`"))?;
                out.push(b);
            }
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    toks: &'a [(usize, Tok)],
    pos: usize,
    line: usize,
    line_len: usize,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [(usize, Tok)], line: usize, line_len: usize) -> Self {
        Cursor { toks, pos: 0, line, line_len }
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.0).unwrap_or(self.line_len) + 1
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { line: self.line, col: self.col(), message: message.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn next(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos).map(|t| &t.1);
        self.pos += 1;
        t
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => self.err(format!("unexpected {} at end of line", t.describe())),
        }
    }

    fn punct(&mut self, c: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Punct(p)) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => self.err(format!("expected `{c}`, found {}", t.describe())),
            None => self.err(format!("expected `{c}`")),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            Some(t) => self.err(format!("expected a name, found {}", t.describe())),
            None => self.err("expected a name"),
        }
    }

    fn global_name(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Global(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            Some(t) => self.err(format!("expected `@name`, found {}", t.describe())),
            None => self.err("expected `@name`"),
        }
    }

    fn reg(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Reg(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            Some(t) => self.err(format!("expected `%name`, found {}", t.describe())),
            None => self.err("expected `%name`"),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            Some(t) => self.err(format!("expected an integer, found {}", t.describe())),
            None => self.err("expected an integer"),
        }
    }

    fn ty(&mut self) -> Result<Type, ParseError> {
        let name = self.ident()?;
        match name.as_str() {
            "int" => Ok(Type::Int),
            "byte" => Ok(Type::Byte),
            "str" => Ok(Type::Str),
            "fnptr" => Ok(Type::FnPtr),
            "ptr" => {
                self.punct('<')?;
                let inner = self.ty()?;
                self.punct('>')?;
                Ok(Type::ptr(inner))
            }
            "arr" => {
                self.punct('<')?;
                let inner = self.ty()?;
                self.punct(',')?;
                let n = self.int()?;
                if n < 1 {
                    return self.err("array length must be at least 1");
                }
                self.punct('>')?;
                Ok(Type::Arr(Box::new(inner), n as u64))
            }
            "struct" => Ok(Type::Struct(self.ident()?)),
            other => {
                self.pos -= 1;
                self.err(format!("unknown type `{other}`"))
            }
        }
    }

    fn literal(&mut self) -> Option<ConstValue> {
        let v = match self.peek()? {
            Tok::Int(v) => ConstValue::Int(*v),
            Tok::Byte(b) => ConstValue::Byte(*b),
            Tok::Str(s) => ConstValue::Str(s.clone()),
            Tok::Ident(s) if s == "null" => ConstValue::Null,
            _ => return None,
        };
        self.pos += 1;
        Some(v)
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        if let Some(c) = self.literal() {
            return Ok(Operand::Const(c));
        }
        match self.peek() {
            Some(Tok::Reg(r)) => {
                let r = r.clone();
                self.pos += 1;
                Ok(Operand::Reg(r))
            }
            Some(Tok::Global(g)) => {
                let g = g.clone();
                self.pos += 1;
                Ok(Operand::Global(g))
            }
            Some(t) => self.err(format!("expected an operand, found {}", t.describe())),
            None => self.err("expected an operand"),
        }
    }

    /// Remaining comma-separated operands, each preceded by a comma.
    fn trailing_operands(&mut self) -> Result<Vec<Operand>, ParseError> {
        let mut out = Vec::new();
        while self.eat_punct(',') {
            out.push(self.operand()?);
        }
        Ok(out)
    }
}

/// Parses a standalone type expression such as `ptr<struct Flags>`.
pub fn parse_type(text: &str) -> Result<Type, ParseError> {
    let toks = lex_line(text, 1)?;
    let mut cur = Cursor::new(&toks, 1, text.len());
    let ty = cur.ty()?;
    cur.expect_end()?;
    Ok(ty)
}

struct FnBuilder {
    func: Function,
    line: usize,
}

/// Source lines of parsed entities, used for resolution errors.
#[derive(Default)]
struct Lines {
    insts: HashMap<InstId, usize>,
    globals: HashMap<String, usize>,
    functions: HashMap<String, usize>,
    structs: HashMap<String, usize>,
}

pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut prog = Program::default();
    let mut lines = Lines::default();
    let mut current: Option<FnBuilder> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks = lex_line(raw, line)?;
        if toks.is_empty() {
            continue;
        }
        let mut cur = Cursor::new(&toks, line, raw.chars().count());

        if let Some(fb) = current.as_mut() {
            if toks.len() == 1 && toks[0].1 == Tok::Punct('}') {
                let fb = current.take().expect("open function");
                if fb.func.blocks.is_empty() {
                    return cur.err(format!("function `@{}` has no blocks", fb.func.name));
                }
                prog.functions.push(fb.func);
                continue;
            }
            if let (Some(Tok::Ident(label)), Some(Tok::Punct(':')), 2) =
                (toks.first().map(|t| &t.1), toks.get(1).map(|t| &t.1), toks.len())
            {
                fb.func.blocks.push(Block { label: label.clone(), insts: Vec::new() });
                continue;
            }
            let Some(block) = fb.func.blocks.last_mut() else {
                return cur.err("instruction outside of a block; add a label first");
            };
            let (result, op) = parse_inst(&mut cur)?;
            let id = InstId(prog.next_id);
            prog.next_id += 1;
            lines.insts.insert(id, line);
            block.insts.push(Instruction::new(id, result, op));
            continue;
        }

        let head = cur.ident()?;
        match head.as_str() {
            "struct" => {
                let name = cur.ident()?;
                cur.punct('{')?;
                let mut fields = vec![cur.ty()?];
                while cur.eat_punct(',') {
                    fields.push(cur.ty()?);
                }
                cur.punct('}')?;
                cur.expect_end()?;
                lines.structs.insert(name.clone(), line);
                prog.structs.push(StructDef { name, fields });
            }
            "global" => {
                let name = cur.global_name()?;
                cur.punct(':')?;
                let ty = cur.ty()?;
                cur.punct('=')?;
                let init = if cur.peek() == Some(&Tok::Ident("zeroinit".into())) {
                    cur.next();
                    Initializer::Zero
                } else {
                    match cur.literal() {
                        Some(c) => Initializer::Const(c),
                        None => return cur.err("expected a constant initializer"),
                    }
                };
                cur.expect_end()?;
                lines.globals.insert(name.clone(), line);
                prog.globals.push(Global { name, ty, init });
            }
            "fn" => {
                let name = cur.global_name()?;
                cur.punct('(')?;
                let mut params = Vec::new();
                if !cur.eat_punct(')') {
                    loop {
                        let pname = cur.reg()?;
                        cur.punct(':')?;
                        let ty = cur.ty()?;
                        params.push(Param { name: pname, ty });
                        if cur.eat_punct(')') {
                            break;
                        }
                        cur.punct(',')?;
                    }
                }
                let ret = if cur.peek() == Some(&Tok::Arrow) {
                    cur.next();
                    Some(cur.ty()?)
                } else {
                    None
                };
                cur.punct('{')?;
                cur.expect_end()?;
                lines.functions.insert(name.clone(), line);
                current = Some(FnBuilder {
                    func: Function { name, params, ret, blocks: Vec::new() },
                    line,
                });
            }
            other => {
                cur.pos = 0;
                return cur.err(format!("expected `struct`, `global` or `fn`, found `{other}`"));
            }
        }
    }

    if let Some(fb) = current {
        return Err(ParseError::Syntax {
            line: fb.line,
            col: 1,
            message: format!("function `@{}` is missing its closing `}}`", fb.func.name),
        });
    }
    resolve(&prog, &lines)?;
    Ok(prog)
}

fn parse_inst(cur: &mut Cursor<'_>) -> Result<(Option<String>, Op), ParseError> {
    let result = if let Some(Tok::Reg(r)) = cur.peek() {
        let r = r.clone();
        cur.next();
        cur.punct('=')?;
        Some(r)
    } else {
        None
    };
    let opcode = cur.ident()?;
    let op = match opcode.as_str() {
        "const" => match cur.literal() {
            Some(c) => Op::Const(c),
            None => return cur.err("`const` expects a literal"),
        },
        "alloca" => Op::Alloca(cur.ty()?),
        "heap" => Op::Heap(cur.ty()?),
        "load" => Op::Load(cur.operand()?),
        "store" => {
            let value = cur.operand()?;
            cur.punct(',')?;
            let addr = cur.operand()?;
            Op::Store { value, addr }
        }
        "field" => {
            let base = cur.operand()?;
            cur.punct(',')?;
            let index = cur.int()?;
            if !(0..=i64::from(u32::MAX)).contains(&index) {
                return cur.err("field index out of range");
            }
            Op::Field { base, index: index as u32 }
        }
        "index" => {
            let base = cur.operand()?;
            cur.punct(',')?;
            let index = cur.operand()?;
            Op::Index { base, index }
        }
        "call" => {
            let callee = cur.global_name()?;
            let args = cur.trailing_operands()?;
            Op::Call { callee, args }
        }
        "icall" => {
            let ret = if result.is_some() {
                let t = cur.ty()?;
                cur.punct(',')?;
                Some(t)
            } else {
                None
            };
            let callee = cur.operand()?;
            let args = cur.trailing_operands()?;
            Op::ICall { ret, callee, args }
        }
        "funcaddr" => Op::FuncAddr(cur.global_name()?),
        "br" => Op::Br(cur.ident()?),
        "cbr" => {
            let cond = cur.operand()?;
            cur.punct(',')?;
            let then_to = cur.ident()?;
            cur.punct(',')?;
            let else_to = cur.ident()?;
            Op::Cbr { cond, then_to, else_to }
        }
        "ret" => {
            if cur.at_end() {
                Op::Ret(None)
            } else {
                Op::Ret(Some(cur.operand()?))
            }
        }
        "neckmark" => Op::NeckMark,
        other => match BinOp::ALL.into_iter().find(|b| b.mnemonic() == other) {
            Some(bin) => {
                let a = cur.operand()?;
                cur.punct(',')?;
                let b = cur.operand()?;
                Op::Bin(bin, a, b)
            }
            None => {
                cur.pos -= 1;
                return cur.err(format!("unknown opcode `{other}`"));
            }
        },
    };
    cur.expect_end()?;
    Ok((result, op))
}

fn resolve(prog: &Program, lines: &Lines) -> Result<(), ParseError> {
    let structs: HashSet<&str> = prog.structs.iter().map(|s| s.name.as_str()).collect();
    let globals: HashSet<&str> = prog.globals.iter().map(|g| g.name.as_str()).collect();
    let functions: HashSet<&str> = prog.functions.iter().map(|f| f.name.as_str()).collect();

    let check_ty = |ty: &Type, line: usize| -> Result<(), ParseError> {
        let mut t = ty;
        loop {
            match t {
                Type::Ptr(inner) | Type::Arr(inner, _) => t = inner,
                Type::Struct(name) if !structs.contains(name.as_str()) => {
                    return Err(ParseError::Resolution {
                        line,
                        message: format!("unknown struct `{name}`"),
                    })
                }
                _ => return Ok(()),
            }
        }
    };

    for s in &prog.structs {
        for f in &s.fields {
            check_ty(f, lines.structs[&s.name])?;
        }
    }
    for g in &prog.globals {
        check_ty(&g.ty, lines.globals[&g.name])?;
    }
    for f in &prog.functions {
        let fline = lines.functions[&f.name];
        for p in &f.params {
            check_ty(&p.ty, fline)?;
        }
        if let Some(r) = &f.ret {
            check_ty(r, fline)?;
        }
        let labels: HashSet<&str> = f.blocks.iter().map(|b| b.label.as_str()).collect();
        for inst in f.insts() {
            let line = lines.insts[&inst.id];
            let unresolved = |message: String| Err(ParseError::Resolution { line, message });
            match &inst.op {
                Op::Alloca(t) | Op::Heap(t) => check_ty(t, line)?,
                Op::ICall { ret: Some(t), .. } => check_ty(t, line)?,
                _ => {}
            }
            for label in inst.op.successors() {
                if !labels.contains(label) {
                    return unresolved(format!("unknown label `{label}` in `@{}`", f.name));
                }
            }
            for o in inst.op.operands() {
                if let Operand::Global(g) = o {
                    if !globals.contains(g.as_str()) {
                        return unresolved(format!("unknown global `@{g}`"));
                    }
                }
            }
            match &inst.op {
                Op::Call { callee, .. }
                    if !functions.contains(callee.as_str()) && Intrinsic::from_name(callee).is_none() =>
                {
                    return unresolved(format!("unknown function `@{callee}`"));
                }
                Op::FuncAddr(target) if !functions.contains(target.as_str()) => {
                    return unresolved(format!("unknown function `@{target}`"));
                }
                _ => {}
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_empty_program() {
        let p = parse_program("").unwrap();
        assert!(p.structs.is_empty() && p.globals.is_empty() && p.functions.is_empty());
        let p = parse_program("# only a comment\n\n").unwrap();
        assert!(p.functions.is_empty());
    }

    #[test]
    fn ids_follow_source_order() {
        let p = parse_program(
            "fn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  %a = const 1\n  br next\nnext:\n  ret %a\n}\n",
        )
        .unwrap();
        let ids: Vec<u32> = p.insts().map(|i| i.id.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(p.next_id, 3);
    }

    #[test]
    fn literals() {
        let p = parse_program(
            "global @a : int = -12\nglobal @b : byte = 'x'\nglobal @c : str = \"a\\tb\\x00\"\nglobal @d : ptr<int> = null\nglobal @e : byte = 255b\n",
        )
        .unwrap();
        let inits: Vec<_> = p.globals.iter().map(|g| g.init.clone()).collect();
        assert_eq!(
            inits,
            vec![
                Initializer::Const(ConstValue::Int(-12)),
                Initializer::Const(ConstValue::Byte(b'x')),
                Initializer::Const(ConstValue::Str(vec![b'a', b'\t', b'b', 0])),
                Initializer::Const(ConstValue::Null),
                Initializer::Const(ConstValue::Byte(255)),
            ]
        );
    }

    #[test]
    fn undefined_label_is_a_resolution_error() {
        let err = parse_program("fn @main() {\nentry:\n  br Lx\n}\n").unwrap_err();
        assert!(matches!(err, ParseError::Resolution { line: 3, .. }), "{err}");
    }

    #[test]
    fn unknown_names_are_resolution_errors() {
        for src in [
            "fn @main() {\nentry:\n  %x = load @nope\n  ret\n}\n",
            "fn @main() {\nentry:\n  call @nope\n  ret\n}\n",
            "fn @main() {\nentry:\n  %x = alloca struct Nope\n  ret\n}\n",
            "global @g : ptr<struct Nope> = null\n",
        ] {
            assert!(matches!(parse_program(src), Err(ParseError::Resolution { .. })), "{src}");
        }
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse_program("global @g : int = \n").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 1, .. }));
        let err = parse_program("fn @main() {\nentry:\n  %x = frobnicate 1\n}\n").unwrap_err();
        assert_eq!(err, ParseError::Syntax { line: 3, col: 8, message: "unknown opcode `frobnicate`".into() });
        assert!(parse_program("fn @main() {\nentry:\n  ret\n").is_err());
        assert!(parse_program("global @g : arr<int, 0> = zeroinit\n").is_err());
    }

    #[test]
    fn type_round_trip() {
        for t in ["int", "ptr<ptr<byte>>", "arr<struct S, 4>", "fnptr", "str"] {
            assert_eq!(parse_type(t).unwrap().to_string(), t);
        }
    }
}
