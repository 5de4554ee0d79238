//! Simplifier properties on randomly generated loop-free programs.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use neckcut::harness::{diff_run, random_delayed_inputs, stats, StdinProfile, Verdict};
use neckcut::interp::Invocation;
use neckcut::ir::{parse_program, validate, Program};
use neckcut::simplify::run_simplify;
use proptest::prelude::*;

const SLOTS: usize = 3;
const BINOPS: [&str; 10] = ["add", "sub", "mul", "div", "eq", "ne", "lt", "le", "gt", "ge"];

#[derive(Clone, Debug)]
enum Val {
    Reg(usize),
    Lit(i64),
}

#[derive(Clone, Debug)]
enum Step {
    Load(usize),
    Const(i64),
    Bin(usize, Val, Val),
    Store(usize, Val),
    Print(Val),
    ReadLine,
    Helper(Val),
}

#[derive(Clone, Debug)]
enum Exit {
    Ret(Val),
    Jump(usize),
    Branch(Val, usize, usize),
}

#[derive(Clone, Debug)]
struct Shape {
    blocks: Vec<(Vec<Step>, Exit)>,
    unused_global: bool,
}

fn val() -> impl Strategy<Value = Val> {
    prop_oneof![(0usize..8).prop_map(Val::Reg), (-3i64..6).prop_map(Val::Lit)]
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        (0..SLOTS).prop_map(Step::Load),
        (-3i64..6).prop_map(Step::Const),
        (0..BINOPS.len(), val(), val()).prop_map(|(o, a, b)| Step::Bin(o, a, b)),
        (0..SLOTS, val()).prop_map(|(s, v)| Step::Store(s, v)),
        val().prop_map(Step::Print),
        Just(Step::ReadLine),
        val().prop_map(Step::Helper),
    ]
}

fn exit() -> impl Strategy<Value = Exit> {
    prop_oneof![
        val().prop_map(Exit::Ret),
        (0usize..6).prop_map(Exit::Jump),
        (val(), 0usize..6, 0usize..6).prop_map(|(c, a, b)| Exit::Branch(c, a, b)),
    ]
}

fn shape() -> impl Strategy<Value = Shape> {
    (prop::collection::vec((prop::collection::vec(step(), 0..6), exit()), 1..7), any::<bool>())
        .prop_map(|(blocks, unused_global)| Shape { blocks, unused_global })
}

/// Renders a shape as IR. Registers are block-local and edges only go
/// forward, so every program validates and terminates.
fn render(s: &Shape) -> String {
    let mut out = String::from("global @g : int = 0\n");
    if s.unused_global {
        out.push_str("global @unused : int = 5\n");
    }
    out.push_str("fn @helper(%x: int) {\nentry:\n  call @print_int, %x\n  store %x, @g\n  ret\n}\n");
    out.push_str("fn @orphan() {\nentry:\n  ret\n}\n");
    out.push_str("fn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\n");
    let n = s.blocks.len();
    let mut next = 0;
    for (bi, (steps, exit)) in s.blocks.iter().enumerate() {
        let _ = writeln!(out, "b{bi}:");
        if bi == 0 {
            out.push_str("  %buf = alloca arr<byte, 16>\n");
            for k in 0..SLOTS {
                let _ = writeln!(out, "  %s{k} = alloca int\n  store {k}, %s{k}");
            }
        }
        let mut regs: Vec<String> = Vec::new();
        let mut fresh = |regs: &mut Vec<String>| {
            next += 1;
            let r = format!("%r{next}");
            regs.push(r.clone());
            r
        };
        let pick = |regs: &Vec<String>, v: &Val| match v {
            Val::Reg(i) if !regs.is_empty() => regs[i % regs.len()].clone(),
            Val::Reg(i) => (*i as i64).to_string(),
            Val::Lit(x) => x.to_string(),
        };
        for st in steps {
            match st {
                Step::Load(k) => {
                    let r = fresh(&mut regs);
                    let _ = writeln!(out, "  {r} = load %s{k}");
                }
                Step::Const(c) => {
                    let r = fresh(&mut regs);
                    let _ = writeln!(out, "  {r} = const {c}");
                }
                Step::Bin(o, a, b) => {
                    let (a, mut b) = (pick(&regs, a), pick(&regs, b));
                    if BINOPS[*o] == "div" && b == "0" {
                        b = "1".into();
                    }
                    let r = fresh(&mut regs);
                    let _ = writeln!(out, "  {r} = {} {a}, {b}", BINOPS[*o]);
                }
                Step::Store(k, v) => {
                    let _ = writeln!(out, "  store {}, %s{k}", pick(&regs, v));
                }
                Step::Print(v) => {
                    let _ = writeln!(out, "  call @print_int, {}", pick(&regs, v));
                }
                Step::ReadLine => {
                    let r = fresh(&mut regs);
                    let _ = writeln!(out, "  {r} = call @read_line, %buf, 16");
                }
                Step::Helper(v) => {
                    let _ = writeln!(out, "  call @helper, {}", pick(&regs, v));
                }
            }
        }
        let forward = |t: usize| if bi + 1 >= n { None } else { Some(bi + 1 + t % (n - bi - 1)) };
        match (exit, forward(0)) {
            (Exit::Ret(v), _) => {
                let _ = writeln!(out, "  ret {}", pick(&regs, v));
            }
            (_, None) => out.push_str("  ret 0\n"),
            (Exit::Jump(t), _) => {
                let _ = writeln!(out, "  br b{}", forward(*t).unwrap());
            }
            (Exit::Branch(c, a, b), _) => {
                let c = pick(&regs, c);
                let _ = writeln!(out, "  cbr {c}, b{}, b{}", forward(*a).unwrap(), forward(*b).unwrap());
            }
        }
    }
    out.push_str("}\n");
    out
}

fn program(s: &Shape) -> Program {
    let text = render(s);
    let p = parse_program(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
    assert!(validate(&p).is_empty(), "{:?}\n{text}", validate(&p));
    p
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn simplification_preserves_behaviour(s in shape(), seed in 0u64..1000) {
        let p = program(&s);
        let (q, _) = run_simplify(&p, &BTreeSet::new());
        prop_assert!(validate(&q).is_empty(), "{:?}", validate(&q));
        let inputs = random_delayed_inputs(seed, 5, StdinProfile::Text);
        let report = diff_run(&p, &q, &Invocation::supplied(&[]), &inputs);
        prop_assert_eq!(report.verdict, Verdict::Pass, "{:?}", report.mismatches.first());
    }

    #[test]
    fn simplification_reaches_a_fixed_point(s in shape()) {
        let p = program(&s);
        let (q, _) = run_simplify(&p, &BTreeSet::new());
        let (r, reports) = run_simplify(&q, &BTreeSet::new());
        prop_assert!(r.structurally_equal(&q));
        prop_assert!(reports.iter().all(|r| !r.removed_anything()));
    }

    #[test]
    fn counts_never_grow_and_reports_add_up(s in shape()) {
        let p = program(&s);
        let (q, reports) = run_simplify(&p, &BTreeSet::new());
        let (a, b) = (stats(&p), stats(&q));
        prop_assert!(b.ir_insts <= a.ir_insts && b.basic_blocks <= a.basic_blocks);
        prop_assert!(b.funcs <= a.funcs && b.globals <= a.globals);
        let insts: usize = reports.iter().map(|r| r.removed_insts).sum();
        let blocks: usize = reports.iter().map(|r| r.removed_blocks).sum();
        let funcs: usize = reports.iter().map(|r| r.removed_funcs).sum();
        let globals: usize = reports.iter().map(|r| r.removed_globals).sum();
        prop_assert_eq!(insts, a.ir_insts - b.ir_insts);
        prop_assert_eq!(blocks, a.basic_blocks - b.basic_blocks);
        prop_assert_eq!(funcs, a.funcs - b.funcs);
        prop_assert_eq!(globals, a.globals - b.globals);
        prop_assert!(q.function("orphan").is_none());
        prop_assert!(q.global("unused").is_none());
    }
}
