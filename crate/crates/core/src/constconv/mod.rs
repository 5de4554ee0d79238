//! Constant conversion: rewrites a necked program so the captured partial
//! state holds at the neck, and replaces post-neck reads of locations the
//! main logic never modifies.

mod locs;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use locs::Loc;
use locs::{Locations, ProgramLocs};

use crate::analysis::{build_cfg, call_graph, post_neck_region, PostNeckRegion};
use crate::interp::{CapturedVar, PartialState, StatePath};
use crate::ir::{ConstValue, Function, Global, Initializer, InstId, Intrinsic, Op, Operand, Program, Type};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Action {
    ReplaceLoadWithConst,
    RewriteStoreSource,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Rewrite {
    pub site: InstId,
    pub action: Action,
    pub value: ConstValue,
    /// Label of the captured variable this rewrite enforces.
    pub variable: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub variable: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConversionPlan {
    pub pre_neck: Vec<Rewrite>,
    pub post_neck: Vec<Rewrite>,
    pub skipped: Vec<Skipped>,
}

impl ConversionPlan {
    pub fn is_empty(&self) -> bool {
        self.pre_neck.is_empty() && self.post_neck.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConvError {
    #[error("program has no neck marker at {0}")]
    NoNeck(InstId),
    #[error("captured variable {0} does not resolve in the program")]
    StateMismatch(String),
    #[error("plan names unknown site {0}")]
    UnknownSite(InstId),
}

/// Static type of the object a state path names.
fn path_type(p: &Program, path: &StatePath) -> Option<Type> {
    match path {
        StatePath::Global(g) => Some(p.global(g)?.ty.clone()),
        StatePath::StackSlot { function, alloca } => match &p.function(function)?.inst(*alloca)?.op {
            Op::Alloca(t) => Some(t.clone()),
            _ => None,
        },
        StatePath::PtrTarget(base) => match path_type(p, base)? {
            Type::Ptr(inner) => Some(*inner),
            Type::Str => Some(Type::Byte),
            _ => None,
        },
        StatePath::StructElem { base, index } => match path_type(p, base)? {
            Type::Struct(name) => p.struct_def(&name)?.fields.get(*index as usize).cloned(),
            _ => None,
        },
    }
}

fn path_loc(path: &StatePath) -> Loc {
    match path {
        StatePath::Global(g) => Loc::Global(g.clone()),
        StatePath::StackSlot { alloca, .. } => Loc::Slot(*alloca),
        StatePath::PtrTarget(b) => Loc::Deref(Box::new(path_loc(b))),
        StatePath::StructElem { base, index } => Loc::Elem(Box::new(path_loc(base)), *index),
    }
}

/// A store-like write: address location and the stored value's type.
struct Write {
    site: InstId,
    addr: Loc,
    value_ty: Option<Type>,
}

fn writes_of<'a>(locs: &'a Locations, f: &'a Function) -> impl Iterator<Item = Write> + 'a {
    f.insts().filter_map(move |i| match &i.op {
        Op::Store { value, addr } => Some(Write {
            site: i.id,
            addr: locs.loc_of(addr),
            value_ty: locs.type_of(value),
        }),
        Op::Call { callee, args } if Intrinsic::from_name(callee).is_some_and(Intrinsic::writes_memory) => {
            Some(Write { site: i.id, addr: Loc::Index(Box::new(locs.loc_of(&args[0]))), value_ty: Some(Type::Byte) })
        }
        _ => None,
    })
}

struct Planner<'p> {
    p: &'p Program,
    locs: ProgramLocs<'p>,
    region: PostNeckRegion,
    neck_fn: &'p Function,
}

impl<'p> Planner<'p> {
    fn may_write(&self, w: &Write, target: &Loc, target_ty: &Type) -> bool {
        if w.addr.has_ancestor(target) || target.has_ancestor(&w.addr) {
            return true;
        }
        if w.addr.is_concrete() && target.is_concrete() {
            return false;
        }
        if w.addr.diverges_from(target) {
            return false;
        }
        let compatible = match &w.value_ty {
            Some(t) => t.is_numeric() == target_ty.is_numeric(),
            None => true,
        };
        compatible && self.locs.is_taken(target)
    }

    fn is_pre_neck(&self, id: InstId) -> bool {
        !self.region.contains(id)
    }

    /// Writes that may run after `site` and before the neck.
    fn writes_between(&self, site: InstId) -> Vec<Write> {
        let f = self.neck_fn;
        let (b, o) = f.locate(site).expect("site in neck function");
        let cfg = build_cfg(f);
        let mut blocks: BTreeSet<usize> = BTreeSet::new();
        for &s in &cfg.graph.succs[b] {
            let r = cfg.graph.reachable_from(s);
            blocks.extend(r.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| i));
        }
        let mut ids: Vec<InstId> = Vec::new();
        for bi in &blocks {
            ids.extend(f.blocks[*bi].insts.iter().map(|i| i.id));
        }
        ids.extend(f.blocks[b].insts[o + 1..].iter().map(|i| i.id));
        let ids: BTreeSet<InstId> = ids.into_iter().filter(|&i| self.is_pre_neck(i)).collect();

        let locs = self.locs.of(&f.name);
        let mut out: Vec<Write> = writes_of(locs, f).filter(|w| ids.contains(&w.site)).collect();
        let cg = call_graph(self.p);
        let mut callees: BTreeSet<String> = BTreeSet::new();
        for i in f.insts().filter(|i| ids.contains(&i.id)) {
            match &i.op {
                Op::Call { callee, .. } if self.p.function(callee).is_some() => {
                    callees.extend(cg.reachable_from(callee));
                }
                Op::ICall { .. } => {
                    for a in &cg.address_taken {
                        callees.extend(cg.reachable_from(a));
                    }
                }
                _ => {}
            }
        }
        for name in callees {
            let g = self.p.function(&name).expect("callee exists");
            out.extend(writes_of(self.locs.of(&name), g));
        }
        out
    }

    fn region_writes(&self) -> Vec<Write> {
        let mut out = Vec::new();
        for f in &self.p.functions {
            let locs = self.locs.of(&f.name);
            out.extend(writes_of(locs, f).filter(|w| self.region.contains(w.site)));
        }
        out
    }

    fn in_loop(&self, site: InstId) -> bool {
        let fa = crate::analysis::FunctionAnalysis::new(self.neck_fn);
        self.neck_fn.locate(site).is_some_and(|(b, _)| fa.loops.in_any_loop(b))
    }

    fn plan(&self, st: &PartialState) -> Result<ConversionPlan, ConvError> {
        let mut plan = ConversionPlan::default();
        let region_writes = self.region_writes();
        let neck_locs = self.locs.of(&self.neck_fn.name);

        for e in &st.entries {
            let ty = path_type(self.p, &e.path).ok_or_else(|| ConvError::StateMismatch(e.label.clone()))?;
            if let StatePath::StackSlot { function, .. } = e.path.root() {
                if *function != self.neck_fn.name {
                    plan.skipped.push(skip(e, "slot outside the neck function"));
                    continue;
                }
            }
            let target = path_loc(&e.path);
            let is_str = matches!(e.value, ConstValue::Str(_));
            let loads: Vec<InstId> = self
                .neck_fn
                .insts()
                .filter(|i| matches!(&i.op, Op::Load(a) if neck_locs.loc_of(a) == target))
                .map(|i| i.id)
                .collect();
            let (pre_loads, post_loads): (Vec<InstId>, Vec<InstId>) =
                loads.into_iter().partition(|&id| self.is_pre_neck(id));

            let base = matches!(e.path, StatePath::Global(_) | StatePath::StackSlot { .. });
            if base && !is_str {
                for site in pre_loads {
                    if self.in_loop(site) {
                        plan.skipped.push(skip(e, &format!("pre-neck load {site} is inside a loop")));
                    } else if self.writes_between(site).iter().any(|w| self.may_write(w, &target, &ty)) {
                        plan.skipped.push(skip(e, &format!("pre-neck load {site} may be overwritten before the neck")));
                    } else if matches!(e.value, ConstValue::Null) {
                        plan.skipped.push(skip(e, "null pointers are not materialised"));
                    } else {
                        plan.pre_neck.push(rewrite(e, site, Action::ReplaceLoadWithConst));
                    }
                }
            } else {
                let stores: Vec<InstId> = writes_of(neck_locs, self.neck_fn)
                    .filter(|w| self.is_pre_neck(w.site) && w.addr == target)
                    .map(|w| w.site)
                    .collect();
                if !stores.is_empty() {
                    if !pre_loads.is_empty() {
                        plan.skipped.push(skip(e, "location is read before the neck"));
                    } else if self.locs.is_taken(&target) {
                        plan.skipped.push(skip(e, "location may be reached through other pointers"));
                    } else {
                        for site in stores {
                            if !self.store_already(site, &e.value) {
                                plan.pre_neck.push(rewrite(e, site, Action::RewriteStoreSource));
                            }
                        }
                    }
                }
            }

            if post_loads.is_empty() {
                continue;
            }
            if let Some(w) = region_writes.iter().find(|w| self.may_write(w, &target, &ty)) {
                plan.skipped.push(skip(e, &format!("modified after the neck at {}", w.site)));
                continue;
            }
            if matches!(e.value, ConstValue::Null) {
                plan.skipped.push(skip(e, "null pointers are not materialised"));
                continue;
            }
            for site in post_loads {
                plan.post_neck.push(rewrite(e, site, Action::ReplaceLoadWithConst));
            }
        }
        Ok(plan)
    }

    /// Whether the store at `site` already writes `value`.
    fn store_already(&self, site: InstId, value: &ConstValue) -> bool {
        let Some(Op::Store { value: v, .. }) = self.p.inst(site).map(|i| &i.op) else { return false };
        match (v, value) {
            (Operand::Const(c), value) => c == value,
            (Operand::Global(g), ConstValue::Str(bytes)) => self.p.global(g).is_some_and(|g| is_string_global(g, bytes)),
            _ => false,
        }
    }
}

fn is_string_global(g: &Global, bytes: &[u8]) -> bool {
    matches!(&g.ty, Type::Arr(elem, n) if **elem == Type::Byte && *n == bytes.len() as u64 + 1)
        && matches!(&g.init, Initializer::Const(ConstValue::Str(s)) if s == bytes)
}

fn skip(e: &CapturedVar, reason: &str) -> Skipped {
    Skipped { variable: e.label.clone(), reason: reason.to_string() }
}

fn rewrite(e: &CapturedVar, site: InstId, action: Action) -> Rewrite {
    Rewrite { site, action, value: e.value.clone(), variable: e.label.clone() }
}

/// Plans the rewrites that enforce `st` at `neck`.
pub fn plan_conversion(p: &Program, st: &PartialState, neck: InstId) -> Result<ConversionPlan, ConvError> {
    let region = post_neck_region(p, neck).map_err(|_| ConvError::NoNeck(neck))?;
    let neck_fn = p.function(&region.neck_function).expect("neck function exists");
    let planner = Planner { p, locs: ProgramLocs::new(p), region, neck_fn };
    planner.plan(st)
}

/// Applies a plan. Replaced loads become `const` instructions with fresh ids;
/// string values are materialised as new NUL-terminated global byte arrays.
pub fn apply_conversion(p: &Program, plan: &ConversionPlan) -> Result<Program, ConvError> {
    let mut out = p.clone();
    let mut strings: HashMap<Vec<u8>, String> = HashMap::new();
    for r in plan.pre_neck.iter().chain(&plan.post_neck) {
        match r.action {
            Action::ReplaceLoadWithConst => {
                let id = out.fresh_id();
                let inst = out.inst_mut(r.site).ok_or(ConvError::UnknownSite(r.site))?;
                if !matches!(inst.op, Op::Load(_)) {
                    return Err(ConvError::UnknownSite(r.site));
                }
                inst.op = Op::Const(r.value.clone());
                inst.id = id;
            }
            Action::RewriteStoreSource => {
                let operand = match &r.value {
                    ConstValue::Str(bytes) => Operand::Global(string_global(&mut out, &mut strings, bytes)),
                    v => Operand::Const(v.clone()),
                };
                let inst = out.inst_mut(r.site).ok_or(ConvError::UnknownSite(r.site))?;
                match &mut inst.op {
                    Op::Store { value, .. } => *value = operand,
                    _ => return Err(ConvError::UnknownSite(r.site)),
                }
            }
        }
    }
    Ok(out)
}

fn string_global(p: &mut Program, made: &mut HashMap<Vec<u8>, String>, bytes: &[u8]) -> String {
    if let Some(name) = made.get(bytes) {
        return name.clone();
    }
    let name = (0..)
        .map(|i| format!("str{i}"))
        .find(|n| p.global(n).is_none() && p.function(n).is_none())
        .expect("unbounded");
    p.globals.push(Global {
        name: name.clone(),
        ty: Type::Arr(Box::new(Type::Byte), bytes.len() as u64 + 1),
        init: Initializer::Const(ConstValue::Str(bytes.to_vec())),
    });
    made.insert(bytes.to_vec(), name.clone());
    name
}
