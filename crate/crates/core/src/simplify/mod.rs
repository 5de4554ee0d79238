//! Multi-stage simplification: constant folding, CFG simplification and
//! cleanup of unused functions, globals, stack slots and dead values,
//! repeated until a round changes nothing.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::Serialize;

use crate::analysis::{build_cfg, call_graph, def_use, global_uses, DefKey};
use crate::harness::{stats, SizeStats};
use crate::ir::{BinOp, ConstValue, Function, InstId, Op, Operand, Program};

/// What one pass removed, summed over every round it ran in.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PassReport {
    pub pass: String,
    pub removed_insts: usize,
    pub removed_blocks: usize,
    pub removed_funcs: usize,
    pub removed_globals: usize,
    pub iterations: usize,
    /// Sites left unfolded because evaluating them would trap.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fold_traps: Vec<InstId>,
}

impl PassReport {
    fn new(pass: &str) -> PassReport {
        PassReport { pass: pass.to_string(), ..PassReport::default() }
    }

    fn diff(pass: &str, before: &SizeStats, after: &SizeStats) -> PassReport {
        PassReport {
            pass: pass.to_string(),
            removed_insts: before.ir_insts.saturating_sub(after.ir_insts),
            removed_blocks: before.basic_blocks.saturating_sub(after.basic_blocks),
            removed_funcs: before.funcs.saturating_sub(after.funcs),
            removed_globals: before.globals.saturating_sub(after.globals),
            iterations: 1,
            fold_traps: Vec::new(),
        }
    }

    fn absorb(&mut self, other: PassReport) {
        self.removed_insts += other.removed_insts;
        self.removed_blocks += other.removed_blocks;
        self.removed_funcs += other.removed_funcs;
        self.removed_globals += other.removed_globals;
        self.iterations += other.iterations;
        for t in other.fold_traps {
            if !self.fold_traps.contains(&t) {
                self.fold_traps.push(t);
            }
        }
    }

    pub fn removed_anything(&self) -> bool {
        self.removed_insts + self.removed_blocks + self.removed_funcs + self.removed_globals > 0
    }
}

fn const_operand(o: &Operand, consts: &HashMap<String, ConstValue>) -> Option<ConstValue> {
    match o {
        Operand::Const(c) => Some(c.clone()),
        Operand::Reg(r) => consts.get(r).cloned(),
        Operand::Global(_) => None,
    }
}

/// Result of `op a, b` on constants, `Err` when it would trap and `Ok(None)`
/// when the operands are not foldable.
fn fold_bin(op: BinOp, a: &ConstValue, b: &ConstValue) -> Result<Option<i64>, ()> {
    if let (Some(x), Some(y)) = (a.as_int(), b.as_int()) {
        return op.eval(x, y).map(Some).ok_or(());
    }
    Ok(match (op, a, b) {
        (BinOp::Eq, ConstValue::Null, ConstValue::Null) => Some(1),
        (BinOp::Ne, ConstValue::Null, ConstValue::Null) => Some(0),
        _ => None,
    })
}

fn truth(c: &ConstValue) -> Option<bool> {
    match c {
        ConstValue::Int(v) => Some(*v != 0),
        ConstValue::Byte(b) => Some(*b != 0),
        ConstValue::Null => Some(false),
        ConstValue::Str(_) => None,
    }
}

fn fold_function(f: &mut Function, traps: &mut Vec<InstId>) -> bool {
    let mut changed_any = false;
    loop {
        let consts: HashMap<String, ConstValue> = f
            .insts()
            .filter_map(|i| match (&i.result, &i.op) {
                (Some(r), Op::Const(c)) if !matches!(c, ConstValue::Str(_)) => Some((r.clone(), c.clone())),
                _ => None,
            })
            .collect();
        let mut changed = false;
        for inst in f.blocks.iter_mut().flat_map(|b| b.insts.iter_mut()) {
            let replacement = match &inst.op {
                Op::Bin(op, a, b) => match (const_operand(a, &consts), const_operand(b, &consts)) {
                    (Some(x), Some(y)) => match fold_bin(*op, &x, &y) {
                        Ok(Some(v)) => Some(Op::Const(ConstValue::Int(v))),
                        Ok(None) => None,
                        Err(()) => {
                            if !traps.contains(&inst.id) {
                                traps.push(inst.id);
                            }
                            None
                        }
                    },
                    _ => None,
                },
                Op::Cbr { cond, then_to, else_to } => const_operand(cond, &consts)
                    .and_then(|c| truth(&c))
                    .map(|t| Op::Br(if t { then_to.clone() } else { else_to.clone() })),
                _ => None,
            };
            if let Some(op) = replacement {
                inst.op = op;
                changed = true;
            }
        }
        if !changed {
            return changed_any;
        }
        changed_any = true;
    }
}

/// Replaces all-constant arithmetic and comparisons with `const` and
/// constant-condition branches with `br`, to a fixed point.
pub fn constant_fold(p: &Program) -> (Program, PassReport) {
    let mut out = p.clone();
    let mut report = PassReport::new("constant_fold");
    report.iterations = 1;
    for f in &mut out.functions {
        fold_function(f, &mut report.fold_traps);
    }
    let d = PassReport::diff("constant_fold", &stats(p), &stats(&out));
    report.removed_insts = d.removed_insts;
    (out, report)
}

/// Deletes blocks unreachable from the entry and merges a block into its
/// single predecessor when that predecessor has no other successor.
pub fn simplify_cfg(f: &Function) -> (Function, PassReport) {
    let mut out = f.clone();
    let mut report = PassReport::new("simplify_cfg");
    report.iterations = 1;
    loop {
        let cfg = build_cfg(&out);
        let before = out.blocks.len();
        let mut k = 0;
        out.blocks.retain(|_| {
            k += 1;
            cfg.reachable[k - 1]
        });
        let unreachable = before - out.blocks.len();
        report.removed_blocks += unreachable;

        let merged = merge_one(&mut out);
        if merged {
            report.removed_blocks += 1;
        }
        if unreachable == 0 && !merged {
            break;
        }
    }
    report.removed_insts = f.inst_count() - out.inst_count();
    (out, report)
}

fn merge_one(f: &mut Function) -> bool {
    let mut preds: HashMap<&str, BTreeSet<usize>> = HashMap::new();
    for (i, b) in f.blocks.iter().enumerate() {
        for s in b.successors() {
            preds.entry(s).or_default().insert(i);
        }
    }
    let entry = f.blocks.first().map(|b| b.label.as_str());
    let found = f.blocks.iter().enumerate().find_map(|(i, b)| {
        let Some(Op::Br(target)) = b.terminator().map(|t| &t.op) else { return None };
        let only_pred = preds.get(target.as_str()).is_some_and(|ps| ps.len() == 1);
        if Some(target.as_str()) == entry || target == &b.label || !only_pred {
            return None;
        }
        Some((i, f.block_index(target)?))
    });
    let Some((a, b)) = found else { return false };
    let moved = f.blocks.remove(b);
    let a = if b < a { a - 1 } else { a };
    f.blocks[a].insts.pop();
    f.blocks[a].insts.extend(moved.insts);
    true
}

/// Instructions whose only effect is their result.
fn is_removable_when_unused(op: &Op) -> bool {
    match op {
        Op::Const(_) | Op::Heap(_) | Op::Load(_) | Op::Field { .. } | Op::Index { .. } | Op::FuncAddr(_) => true,
        // Division stays unless its divisor is a non-zero constant.
        Op::Bin(BinOp::Div, _, d) => matches!(d, Operand::Const(c) if c.as_int().is_some_and(|v| v != 0)),
        Op::Bin(..) => true,
        _ => false,
    }
}

/// Removes dead values and unused stack slots in one function.
fn clean_function(f: &mut Function) -> bool {
    let mut changed = false;
    loop {
        let du = def_use(f);
        let mut doomed: HashSet<InstId> = HashSet::new();
        let by_id: HashMap<InstId, &Op> = f.insts().map(|i| (i.id, &i.op)).collect();
        for inst in f.insts() {
            if inst.result.is_none() {
                continue;
            }
            let uses = du.uses_of(&DefKey::Inst(inst.id));
            match &inst.op {
                Op::Alloca(_) => {
                    // A slot that is only ever stored into holds nothing anyone reads.
                    let reg = inst.result.as_deref().expect("alloca result");
                    let only_written = uses.iter().all(|u| {
                        matches!(by_id.get(u), Some(Op::Store { value, addr })
                            if addr.reg() == Some(reg) && value.reg() != Some(reg))
                    });
                    if only_written {
                        doomed.insert(inst.id);
                        doomed.extend(uses.iter().copied());
                    }
                }
                op if uses.is_empty() && is_removable_when_unused(op) => {
                    doomed.insert(inst.id);
                }
                _ => {}
            }
        }
        if doomed.is_empty() {
            return changed;
        }
        for b in &mut f.blocks {
            b.insts.retain(|i| !doomed.contains(&i.id));
        }
        changed = true;
    }
}

/// Removes unused functions, globals and stack variables plus dead values.
/// Functions whose address is taken are always kept.
pub fn cleanup(p: &Program, visited_funcs: &BTreeSet<String>) -> (Program, PassReport) {
    let mut out = p.clone();
    loop {
        let mut changed = false;
        for f in &mut out.functions {
            changed |= clean_function(f);
        }

        let cg = call_graph(&out);
        let mut used: HashSet<&str> = HashSet::new();
        for inst in out.insts() {
            if let Some(callee) = inst.op.function_ref() {
                used.insert(callee);
            }
        }
        // Never executed during interpretation and no remaining references.
        let stage_one: BTreeSet<String> = out
            .functions
            .iter()
            .filter(|f| f.name != "main" && !visited_funcs.contains(&f.name) && !used.contains(f.name.as_str()))
            .map(|f| f.name.clone())
            .collect();
        // Anything else main can no longer reach, unless invoked through a pointer.
        let live = cg.reachable_from("main");
        let doomed: BTreeSet<String> = out
            .functions
            .iter()
            .filter(|f| stage_one.contains(&f.name) || !live.contains(&f.name))
            .filter(|f| f.name != "main" && !cg.address_taken.contains(&f.name))
            .map(|f| f.name.clone())
            .collect();
        if !doomed.is_empty() {
            out.functions.retain(|f| !doomed.contains(&f.name));
            changed = true;
        }

        let gu = global_uses(&out);
        let before = out.globals.len();
        out.globals.retain(|g| gu.get(&g.name).is_some_and(|u| !u.is_empty()));
        changed |= out.globals.len() != before;

        if !changed {
            break;
        }
    }
    (out.clone(), PassReport::diff("cleanup", &stats(p), &stats(&out)))
}

/// Runs fold, CFG simplification and cleanup until a round removes nothing,
/// then drops the neck marker. Returns one aggregated report per pass.
pub fn run_simplify(p: &Program, visited_funcs: &BTreeSet<String>) -> (Program, Vec<PassReport>) {
    let mut reports = vec![PassReport::new("constant_fold"), PassReport::new("simplify_cfg"), PassReport::new("cleanup")];
    let mut cur = p.clone();
    loop {
        let before = cur.clone();
        let (folded, r) = constant_fold(&cur);
        reports[0].absorb(r);

        let mut cfg_report = PassReport::new("simplify_cfg");
        let mut simplified = folded;
        for f in &mut simplified.functions {
            let (g, r) = simplify_cfg(f);
            *f = g;
            cfg_report.absorb(r);
        }
        cfg_report.iterations = 1;
        reports[1].absorb(cfg_report);

        let (cleaned, r) = cleanup(&simplified, visited_funcs);
        reports[2].absorb(r);
        cur = cleaned;
        if cur == before {
            break;
        }
    }
    let marks = cur.neck_marks();
    if !marks.is_empty() {
        for b in cur.functions.iter_mut().flat_map(|f| f.blocks.iter_mut()) {
            b.insts.retain(|i| !matches!(i.op, Op::NeckMark));
        }
        reports[2].removed_insts += marks.len();
    }
    (cur, reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, print_program, validate};

    fn prog(body: &str) -> Program {
        parse_program(&format!("fn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {{\n{body}}}\n")).unwrap()
    }

    #[test]
    fn folds_chained_arithmetic() {
        let p = prog("entry:\n  %a = const 3\n  %b = const 4\n  %c = add %a, %b\n  %d = mul %c, 2\n  ret %d\n");
        let (q, _) = constant_fold(&p);
        let text = print_program(&q);
        assert!(text.contains("%c = const 7"), "{text}");
        assert!(text.contains("%d = const 14"), "{text}");
    }

    #[test]
    fn constant_branch_becomes_jump() {
        let p = prog("entry:\n  cbr 0, t, f\nt:\n  ret 1\nf:\n  ret 2\n");
        let (q, _) = constant_fold(&p);
        assert!(print_program(&q).contains("br f"));
        let (r, reps) = run_simplify(&q, &BTreeSet::new());
        assert_eq!(r.functions[0].blocks.len(), 1);
        assert!(reps.iter().any(|r| r.removed_blocks > 0));
    }

    #[test]
    fn division_by_zero_is_reported_not_folded() {
        let p = prog("entry:\n  %z = div 1, 0\n  ret %z\n");
        let (q, rep) = constant_fold(&p);
        assert_eq!(q, p);
        assert_eq!(rep.fold_traps.len(), 1);
    }

    #[test]
    fn orphan_block_deleted_and_chain_merged() {
        let p = prog("entry:\n  br a\na:\n  br b\nb:\n  ret 0\norphan:\n  ret 1\n");
        let (f, rep) = simplify_cfg(&p.functions[0]);
        assert_eq!(f.blocks.len(), 1);
        assert_eq!(rep.removed_blocks, 3);
        assert_eq!(rep.removed_insts, 3);
    }

    #[test]
    fn write_only_slot_removed() {
        let p = prog("entry:\n  %x = alloca int\n  store 5, %x\n  ret 0\n");
        let (q, rep) = cleanup(&p, &BTreeSet::new());
        assert_eq!(q.functions[0].inst_count(), 1);
        assert_eq!(rep.removed_insts, 2);
    }

    #[test]
    fn address_taken_function_survives() {
        let p = parse_program(
            "fn @h() -> int {\nentry:\n  ret 7\n}\nfn @dead() {\nentry:\n  ret\n}\nfn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  %fp = funcaddr @h\n  %r = icall int, %fp\n  ret %r\n}\n",
        )
        .unwrap();
        let (q, _) = run_simplify(&p, &BTreeSet::new());
        assert!(q.function("h").is_some());
        assert!(q.function("dead").is_none());
        assert!(validate(&q).is_empty());
    }

    #[test]
    fn unused_global_removed_and_used_kept() {
        let p = parse_program(
            "global @a : int = 1\nglobal @b : int = 2\nfn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  %v = load @a\n  ret %v\n}\n",
        )
        .unwrap();
        let (q, rep) = cleanup(&p, &BTreeSet::new());
        assert!(q.global("a").is_some() && q.global("b").is_none());
        assert_eq!(rep.removed_globals, 1);
    }

    #[test]
    fn second_run_changes_nothing() {
        let p = prog("entry:\n  %a = const 1\n  cbr %a, t, f\nt:\n  %x = alloca int\n  store 1, %x\n  br f\nf:\n  ret 0\n");
        let (q, _) = run_simplify(&p, &BTreeSet::new());
        let (r, reps) = run_simplify(&q, &BTreeSet::new());
        assert_eq!(q, r);
        assert!(reps.iter().all(|r| !r.removed_anything()));
    }
}
