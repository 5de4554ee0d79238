//! Control-flow, data-flow and call-graph analyses over the IR.

mod graph;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::Serialize;

pub use graph::{Digraph, DomTree, LoopInfo};

use crate::ir::{Function, InstId, Op, Operand, Program};

/// Control-flow graph of one function. Node indices follow block order, so
/// node 0 is the entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cfg {
    pub labels: Vec<String>,
    pub graph: Digraph,
    /// Whether each node is reachable from the entry.
    pub reachable: Vec<bool>,
}

impl Cfg {
    pub fn entry(&self) -> &str {
        &self.labels[0]
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn edges(&self) -> Vec<(&str, &str)> {
        self.graph
            .edges()
            .into_iter()
            .map(|(a, b)| (self.labels[a].as_str(), self.labels[b].as_str()))
            .collect()
    }

    pub fn to_dot(&self, name: &str) -> String {
        let mut s = format!("digraph \"{name}\" {{\n");
        for (i, l) in self.labels.iter().enumerate() {
            let style = if self.reachable[i] { "" } else { " [style=dashed]" };
            let _ = writeln!(s, "  \"{l}\"{style};");
        }
        for (a, b) in self.edges() {
            let _ = writeln!(s, "  \"{a}\" -> \"{b}\";");
        }
        s.push_str("}\n");
        s
    }
}

pub fn build_cfg(f: &Function) -> Cfg {
    let labels: Vec<String> = f.blocks.iter().map(|b| b.label.clone()).collect();
    let mut edges = Vec::new();
    for (i, b) in f.blocks.iter().enumerate() {
        for s in b.successors() {
            if let Some(j) = labels.iter().position(|l| l == s) {
                edges.push((i, j));
            }
        }
    }
    let graph = Digraph::from_edges(labels.len(), &edges);
    let reachable = graph.reachable_from(0);
    Cfg { labels, graph, reachable }
}

/// The per-function bundle most clients need.
#[derive(Clone, Debug)]
pub struct FunctionAnalysis {
    pub cfg: Cfg,
    pub dom: DomTree,
    pub loops: LoopInfo,
    pub articulation: BTreeSet<usize>,
}

impl FunctionAnalysis {
    pub fn new(f: &Function) -> FunctionAnalysis {
        let cfg = build_cfg(f);
        let dom = cfg.graph.dominators();
        let loops = cfg.graph.loops(&dom);
        let articulation = cfg.graph.articulation_points();
        FunctionAnalysis { cfg, dom, loops, articulation }
    }
}

/// Something an operand can name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DefKey {
    /// Register defined by an instruction (an `alloca` result names a stack slot).
    Inst(InstId),
    Param(String),
    Global(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DefUse {
    /// One entry per operand slot that names the definition.
    pub uses: BTreeMap<DefKey, Vec<InstId>>,
}

impl DefUse {
    pub fn uses_of(&self, key: &DefKey) -> &[InstId] {
        self.uses.get(key).map_or(&[], Vec::as_slice)
    }
}

pub fn def_use(f: &Function) -> DefUse {
    let mut defs: BTreeMap<&str, DefKey> = BTreeMap::new();
    for p in &f.params {
        defs.insert(&p.name, DefKey::Param(p.name.clone()));
    }
    let mut out = DefUse::default();
    for inst in f.insts() {
        if let Some(r) = &inst.result {
            defs.insert(r, DefKey::Inst(inst.id));
            out.uses.entry(DefKey::Inst(inst.id)).or_default();
        }
    }
    for p in &f.params {
        out.uses.entry(DefKey::Param(p.name.clone())).or_default();
    }
    for inst in f.insts() {
        for o in inst.op.operands() {
            let key = match o {
                Operand::Reg(r) => defs.get(r.as_str()).cloned(),
                Operand::Global(g) => Some(DefKey::Global(g.clone())),
                Operand::Const(_) => None,
            };
            if let Some(k) = key {
                out.uses.entry(k).or_default().push(inst.id);
            }
        }
    }
    out
}

/// Program-wide uses of each global, keyed by name.
pub fn global_uses(p: &Program) -> BTreeMap<String, Vec<InstId>> {
    let mut out: BTreeMap<String, Vec<InstId>> =
        p.globals.iter().map(|g| (g.name.clone(), Vec::new())).collect();
    for inst in p.insts() {
        for o in inst.op.operands() {
            if let Operand::Global(g) = o {
                out.entry(g.clone()).or_default().push(inst.id);
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CallGraph {
    pub nodes: Vec<String>,
    /// `(caller, callee, call site)` for direct calls to user functions.
    pub edges: Vec<(String, String, InstId)>,
    pub address_taken: BTreeSet<String>,
    /// `(caller, call site)` for every `icall`.
    pub indirect_sites: Vec<(String, InstId)>,
}

impl CallGraph {
    /// Functions reachable from `root`. A reachable indirect call site makes
    /// every address-taken function reachable.
    pub fn reachable_from(&self, root: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        if !self.nodes.iter().any(|n| n == root) {
            return seen;
        }
        let mut stack = vec![root.to_string()];
        while let Some(f) = stack.pop() {
            if !seen.insert(f.clone()) {
                continue;
            }
            for (caller, callee, _) in &self.edges {
                if *caller == f && !seen.contains(callee) {
                    stack.push(callee.clone());
                }
            }
            if self.indirect_sites.iter().any(|(c, _)| *c == f) {
                stack.extend(self.address_taken.iter().filter(|a| !seen.contains(*a)).cloned());
            }
        }
        seen
    }
}

pub fn call_graph(p: &Program) -> CallGraph {
    let mut cg = CallGraph {
        nodes: p.functions.iter().map(|f| f.name.clone()).collect(),
        ..CallGraph::default()
    };
    for f in &p.functions {
        for inst in f.insts() {
            match &inst.op {
                Op::Call { callee, .. } if p.function(callee).is_some() => {
                    cg.edges.push((f.name.clone(), callee.clone(), inst.id));
                }
                Op::ICall { .. } => cg.indirect_sites.push((f.name.clone(), inst.id)),
                Op::FuncAddr(g) => {
                    cg.address_taken.insert(g.clone());
                }
                _ => {}
            }
        }
    }
    cg
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegionError {
    #[error("no neck marker at {0}")]
    NoNeck(InstId),
}

/// Instructions that may execute after the neck.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PostNeckRegion {
    pub insts: BTreeSet<InstId>,
    /// Function holding the neck marker.
    pub neck_function: String,
    /// Other functions whose whole body belongs to the region.
    pub functions: BTreeSet<String>,
}

impl PostNeckRegion {
    pub fn contains(&self, id: InstId) -> bool {
        self.insts.contains(&id)
    }
}

/// Everything reachable from the neck: the rest of the neck block, every
/// block reachable from it, and the bodies of functions called from there.
pub fn post_neck_region(p: &Program, neck: InstId) -> Result<PostNeckRegion, RegionError> {
    let (fi, bi, off) = p.locate(neck).ok_or(RegionError::NoNeck(neck))?;
    let f = &p.functions[fi];
    if !matches!(f.blocks[bi].insts[off].op, Op::NeckMark) {
        return Err(RegionError::NoNeck(neck));
    }
    let cfg = build_cfg(f);
    let mut region = PostNeckRegion { neck_function: f.name.clone(), ..Default::default() };

    let mut blocks: BTreeSet<usize> = BTreeSet::new();
    for &s in &cfg.graph.succs[bi] {
        let reach = cfg.graph.reachable_from(s);
        blocks.extend(reach.iter().enumerate().filter(|(_, &r)| r).map(|(i, _)| i));
    }
    let start = if blocks.contains(&bi) { 0 } else { off };
    region.insts.extend(f.blocks[bi].insts[start..].iter().map(|i| i.id));
    for &b in &blocks {
        region.insts.extend(f.blocks[b].insts.iter().map(|i| i.id));
    }

    let cg = call_graph(p);
    let mut pending: Vec<String> = Vec::new();
    let add_calls = |insts: &mut dyn Iterator<Item = &crate::ir::Instruction>, pending: &mut Vec<String>| {
        for inst in insts {
            match &inst.op {
                Op::Call { callee, .. } if p.function(callee).is_some() => pending.push(callee.clone()),
                Op::ICall { .. } => pending.extend(cg.address_taken.iter().cloned()),
                _ => {}
            }
        }
    };
    add_calls(&mut f.insts().filter(|i| region.insts.contains(&i.id)), &mut pending);
    let mut reenters = false;
    while let Some(name) = pending.pop() {
        if name == f.name {
            reenters = true;
            continue;
        }
        if !region.functions.insert(name.clone()) {
            continue;
        }
        let g = p.function(&name).expect("callee exists");
        region.insts.extend(g.insts().map(|i| i.id));
        add_calls(&mut g.insts(), &mut pending);
    }
    // A recursive call back into the neck function re-enters it from the top.
    if reenters {
        region.insts.extend(f.insts().map(|i| i.id));
    }
    Ok(region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn prog(src: &str) -> Program {
        parse_program(src).unwrap()
    }

    #[test]
    fn single_block_and_diamond_cfgs() {
        let p = prog("fn @f() {\nentry:\n  ret\n}\n");
        let c = build_cfg(&p.functions[0]);
        assert_eq!(c.labels.len(), 1);
        assert!(c.edges().is_empty());

        let p = prog(
            "fn @f(%c: int) {\nentry:\n  cbr %c, a, b\na:\n  br join\nb:\n  br join\njoin:\n  ret\n}\n",
        );
        let c = build_cfg(&p.functions[0]);
        assert_eq!(c.labels.len(), 4);
        assert_eq!(c.edges().len(), 4);
        assert!(c.to_dot("f").contains("\"a\" -> \"join\""));
    }

    #[test]
    fn unreachable_blocks_are_kept_and_flagged() {
        let p = prog("fn @f() {\nentry:\n  ret\ndead:\n  ret\n}\n");
        let c = build_cfg(&p.functions[0]);
        assert_eq!(c.reachable, vec![true, false]);
    }

    #[test]
    fn def_use_counts_each_operand_slot() {
        let p = prog("fn @f() -> int {\nentry:\n  %a = const 1\n  %b = add %a, %a\n  %s = alloca int\n  ret %b\n}\n");
        let du = def_use(&p.functions[0]);
        assert_eq!(du.uses_of(&DefKey::Inst(InstId(0))), &[InstId(1), InstId(1)]);
        assert!(du.uses_of(&DefKey::Inst(InstId(2))).is_empty());
    }

    #[test]
    fn call_graph_edges_and_address_taken() {
        let p = prog(
            "fn @g() {\nentry:\n  ret\n}\nfn @h() {\nentry:\n  ret\n}\nfn @f() {\nentry:\n  call @g\n  ret\n}\nfn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  call @f\n  %p = funcaddr @h\n  ret 0\n}\n",
        );
        let cg = call_graph(&p);
        let pairs: Vec<(&str, &str)> = cg.edges.iter().map(|(a, b, _)| (a.as_str(), b.as_str())).collect();
        assert_eq!(pairs, vec![("f", "g"), ("main", "f")]);
        assert_eq!(cg.address_taken, BTreeSet::from(["h".to_string()]));
        let reach = cg.reachable_from("main");
        assert!(reach.contains("g") && !reach.contains("h"));
    }

    #[test]
    fn indirect_site_reaches_address_taken() {
        let p = prog(
            "fn @h() {\nentry:\n  ret\n}\nfn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  %p = funcaddr @h\n  icall %p\n  ret 0\n}\n",
        );
        let cg = call_graph(&p);
        assert!(cg.edges.is_empty());
        assert_eq!(cg.indirect_sites.len(), 1);
        assert!(cg.reachable_from("main").contains("h"));
    }

    #[test]
    fn region_at_entry_is_everything() {
        let p = prog("fn @g() {\nentry:\n  ret\n}\nfn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  call @g\n  br next\nnext:\n  ret 0\n}\n");
        let first = p.functions[1].blocks[0].insts[0].id;
        let p = p.insert_neck_marker(first).unwrap();
        let r = post_neck_region(&p, p.neck().unwrap()).unwrap();
        assert_eq!(r.insts.len(), p.insts().count());
        assert!(r.functions.contains("g"));
    }

    #[test]
    fn region_before_final_ret() {
        let p = prog("fn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  %a = const 1\n  ret 0\n}\n");
        let p = p.insert_neck_marker(InstId(1)).unwrap();
        let neck = p.neck().unwrap();
        let r = post_neck_region(&p, neck).unwrap();
        assert_eq!(r.insts, BTreeSet::from([neck, InstId(1)]));
        assert_eq!(post_neck_region(&p, InstId(0)), Err(RegionError::NoNeck(InstId(0))));
    }
}
