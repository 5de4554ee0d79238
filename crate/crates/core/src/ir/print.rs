use std::fmt::Write;

use super::{Function, Instruction, Op, Operand, Program};

/// Escapes bytes for use inside a string literal (quotes not included).
pub fn escape_bytes(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\n' => out.push_str("\\n"),
            b'\t' => out.push_str("\\t"),
            b'\r' => out.push_str("\\r"),
            0 => out.push_str("\\0"),
            b'\\' => out.push_str("\\\\"),
            b'"' => out.push_str("\\\""),
            0x20..=0x7e => out.push(b as char),
            _ => {
                let _ = write!(out, "\\x{b:02x}");
            }
        }
    }
    out
}

/// Renders a program in canonical form: structs, then globals, then
/// functions, separated by blank lines. An empty program renders as the
/// empty string; anything else ends with exactly one newline.
pub fn print_program(p: &Program) -> String {
    let mut sections: Vec<String> = Vec::new();
    if !p.structs.is_empty() {
        let mut s = String::new();
        for def in &p.structs {
            let fields: Vec<String> = def.fields.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(s, "struct {} {{ {} }}", def.name, fields.join(", "));
        }
        sections.push(s);
    }
    if !p.globals.is_empty() {
        let mut s = String::new();
        for g in &p.globals {
            let _ = writeln!(s, "global @{} : {} = {}", g.name, g.ty, g.init);
        }
        sections.push(s);
    }
    for f in &p.functions {
        sections.push(print_function(f));
    }
    sections.join("\n")
}

pub(crate) fn print_function(f: &Function) -> String {
    let mut s = String::new();
    let params: Vec<String> = f.params.iter().map(|p| format!("%{}: {}", p.name, p.ty)).collect();
    let _ = write!(s, "fn @{}({})", f.name, params.join(", "));
    if let Some(r) = &f.ret {
        let _ = write!(s, " -> {r}");
    }
    s.push_str(" {\n");
    for b in &f.blocks {
        let _ = writeln!(s, "{}:", b.label);
        for i in &b.insts {
            let _ = writeln!(s, "  {}", print_inst(i));
        }
    }
    s.push_str("}\n");
    s
}

fn join(ops: &[Operand]) -> String {
    ops.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(", ")
}

pub(crate) fn print_inst(inst: &Instruction) -> String {
    let mut s = String::new();
    if let Some(r) = &inst.result {
        let _ = write!(s, "%{r} = ");
    }
    let body = match &inst.op {
        Op::Const(c) => format!("const {c}"),
        Op::Bin(op, a, b) => format!("{} {a}, {b}", op.mnemonic()),
        Op::Alloca(t) => format!("alloca {t}"),
        Op::Heap(t) => format!("heap {t}"),
        Op::Load(a) => format!("load {a}"),
        Op::Store { value, addr } => format!("store {value}, {addr}"),
        Op::Field { base, index } => format!("field {base}, {index}"),
        Op::Index { base, index } => format!("index {base}, {index}"),
        Op::Call { callee, args } if args.is_empty() => format!("call @{callee}"),
        Op::Call { callee, args } => format!("call @{callee}, {}", join(args)),
        Op::ICall { ret, callee, args } => {
            let mut t = String::from("icall ");
            if let Some(r) = ret {
                let _ = write!(t, "{r}, ");
            }
            let _ = write!(t, "{callee}");
            if !args.is_empty() {
                let _ = write!(t, ", {}", join(args));
            }
            t
        }
        Op::FuncAddr(f) => format!("funcaddr @{f}"),
        Op::Br(l) => format!("br {l}"),
        Op::Cbr { cond, then_to, else_to } => format!("cbr {cond}, {then_to}, {else_to}"),
        Op::Ret(None) => "ret".to_string(),
        Op::Ret(Some(v)) => format!("ret {v}"),
        Op::NeckMark => "neckmark".to_string(),
    };
    s.push_str(&body);
    s
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    #[test]
    fn empty_program_prints_nothing() {
        assert_eq!(print_program(&Program::default()), "");
    }

    #[test]
    fn global_line_is_exact() {
        let p = parse_program("global @g : int = 7").unwrap();
        assert_eq!(print_program(&p), "global @g : int = 7\n");
    }

    #[test]
    fn escapes_round_trip() {
        let bytes: Vec<u8> = (0..=255).collect();
        let text = escape_bytes(&bytes);
        assert_eq!(super::super::parse::unescape(&text).unwrap(), bytes);
    }

    #[test]
    fn canonical_layout() {
        let src = "fn @f(%x: int) -> int {\nentry:\n  ret %x\n}\nstruct S { int, byte }\nglobal @g : arr<byte, 4> = \"ab\"\n";
        let p = parse_program(src).unwrap();
        assert_eq!(
            print_program(&p),
            "struct S { int, byte }\n\nglobal @g : arr<byte, 4> = \"ab\"\n\nfn @f(%x: int) -> int {\nentry:\n  ret %x\n}\n"
        );
    }
}
