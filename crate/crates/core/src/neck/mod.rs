//! Neck mining: a heuristic picks where input parsing happens, then a
//! structural scan finds the closest point after it that runs exactly once
//! and separates configuration logic from main logic.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::analysis::{FunctionAnalysis, LoopInfo};
use crate::ir::{infer_types, Function, InstId, Op, Operand, Program};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProgramCategory {
    #[serde(rename = "cli", alias = "commandLine")]
    CommandLine,
    #[serde(rename = "config", alias = "configFile")]
    ConfigFile,
}

impl std::str::FromStr for ProgramCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cli" | "commandLine" => Ok(ProgramCategory::CommandLine),
            "config" | "configFile" => Ok(ProgramCategory::ConfigFile),
            other => Err(format!("unknown program category `{other}` (expected cli or config)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MinerConfig {
    pub category: ProgramCategory,
    pub file_parsing_apis: Vec<String>,
}

impl MinerConfig {
    pub fn new(category: ProgramCategory) -> MinerConfig {
        MinerConfig { category, file_parsing_apis: vec!["read_cfg_line".to_string()] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Evidence {
    pub executed_once_proxy: bool,
    pub articulation: bool,
    pub dominates_rest: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NeckCandidate {
    pub inst: InstId,
    pub block: String,
    /// Block hops from the heuristic start's block.
    pub distance: u32,
    /// Block hops from the function entry.
    pub entry_distance: u32,
    pub offset: usize,
    pub evidence: Evidence,
}

impl NeckCandidate {
    pub fn admissible(&self) -> bool {
        let e = self.evidence;
        e.executed_once_proxy && e.articulation && e.dominates_rest
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NeckReport {
    pub category: ProgramCategory,
    pub function: String,
    pub start: InstId,
    pub start_block: String,
    pub candidates: Vec<NeckCandidate>,
    /// Instruction the marker was placed before.
    pub chosen: InstId,
    pub neck_block: String,
    /// Id of the inserted `neckmark`.
    pub marker: InstId,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MineError {
    #[error("program has no main function")]
    NoMain,
    #[error("program already has a neck marker at {0}")]
    ExistingNeck(InstId),
    #[error("config-file category needs at least one file-parsing API")]
    NoParsingApis,
    #[error("no instruction matches the input-parsing heuristic")]
    NoHeuristicMatch,
    #[error("no admissible neck candidate after {0}")]
    NoAdmissibleCandidate(InstId),
    #[error("unknown instruction id {0}")]
    UnknownInstId(InstId),
}

/// Uses of values derived from `main`'s argv that consume the value rather
/// than merely computing another address from it.
fn argv_consumers(p: &Program, main: &Function) -> Vec<InstId> {
    let Some(argv) = main.params.get(1) else { return Vec::new() };
    let env = infer_types(p, main);
    let mut tainted: HashSet<&str> = HashSet::from([argv.name.as_str()]);
    let is_tainted = |t: &HashSet<&str>, o: &Operand| o.reg().is_some_and(|r| t.contains(r));
    let derives = |t: &HashSet<&str>, op: &Op, result: Option<&str>| match op {
        Op::Index { base, .. } | Op::Field { base, .. } => is_tainted(t, base),
        Op::Load(a) => {
            is_tainted(t, a) && result.and_then(|r| env.get(r)).is_some_and(|ty| ty.is_pointer_like())
        }
        _ => false,
    };
    loop {
        let mut changed = false;
        for inst in main.insts() {
            if let Some(r) = inst.result.as_deref() {
                if !tainted.contains(r) && derives(&tainted, &inst.op, Some(r)) {
                    tainted.insert(r);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    main.insts()
        .filter(|i| !derives(&tainted, &i.op, i.result.as_deref()))
        .filter(|i| {
            let ops = match &i.op {
                // Only the index operand of an address computation is consumed.
                Op::Index { index, .. } => vec![index],
                other => other.operands(),
            };
            ops.into_iter().any(|o| is_tainted(&tainted, o))
        })
        .map(|i| i.id)
        .collect()
}

fn in_loop(loops: &LoopInfo, block: usize) -> bool {
    loops.in_any_loop(block)
}

/// The closest input-parsing site to `main`'s entry.
pub fn heuristic_start(p: &Program, cfg: &MinerConfig) -> Result<InstId, MineError> {
    let main = p.function("main").ok_or(MineError::NoMain)?;
    let fa = FunctionAnalysis::new(main);
    let dist = fa.cfg.graph.bfs_distance(0);
    let sites: Vec<InstId> = match cfg.category {
        ProgramCategory::CommandLine => argv_consumers(p, main)
            .into_iter()
            .filter(|&id| main.locate(id).is_some_and(|(b, _)| in_loop(&fa.loops, b)))
            .collect(),
        ProgramCategory::ConfigFile => {
            if cfg.file_parsing_apis.is_empty() {
                return Err(MineError::NoParsingApis);
            }
            main.insts()
                .filter(|i| matches!(&i.op, Op::Call { callee, .. } if cfg.file_parsing_apis.contains(callee)))
                .map(|i| i.id)
                .collect()
        }
    };
    sites
        .into_iter()
        .filter_map(|id| {
            let (b, o) = main.locate(id)?;
            Some(((*dist.get(&b)?, o, id), id))
        })
        .min_by_key(|(k, _)| *k)
        .map(|(_, id)| id)
        .ok_or(MineError::NoHeuristicMatch)
}

/// Every instruction after `start` that could host the neck, with the
/// structural evidence for each. One candidate per block: the instruction
/// right after `start` in its own block, the first instruction elsewhere.
pub fn structural_candidates(p: &Program, start: InstId) -> Result<Vec<NeckCandidate>, MineError> {
    let f = p.function_of(start).ok_or(MineError::UnknownInstId(start))?;
    let (sb, so) = f.locate(start).expect("located above");
    let fa = FunctionAnalysis::new(f);
    let g = &fa.cfg.graph;
    let from_start = g.bfs_distance(sb);
    let from_entry = g.bfs_distance(0);
    let rets: Vec<usize> = f
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| matches!(b.terminator().map(|t| &t.op), Some(Op::Ret(_))))
        .map(|(i, _)| i)
        .collect();

    let mut out = Vec::new();
    for (&b, &d) in &from_start {
        let offset = if b == sb { so + 1 } else { 0 };
        let Some(inst) = f.blocks[b].insts.get(offset) else { continue };
        let reach = g.reachable_from(b);
        let self_reachable = g.succs[b].iter().any(|&s| g.reachable_from(s)[b]);
        let on_every_exit_path = b == 0 || {
            let without = reachable_avoiding(g, b);
            !rets.iter().any(|&r| without[r])
        };
        let others: Vec<usize> = (0..g.len()).filter(|&c| c != b && reach[c]).collect();
        let evidence = Evidence {
            executed_once_proxy: !in_loop(&fa.loops, b) && !self_reachable && on_every_exit_path,
            articulation: fa.articulation.contains(&b) || b == 0 || others.is_empty(),
            dominates_rest: others.iter().all(|&c| fa.dom.dominates(b, c)),
        };
        out.push(NeckCandidate {
            inst: inst.id,
            block: f.blocks[b].label.clone(),
            distance: d,
            entry_distance: from_entry.get(&b).copied().unwrap_or(u32::MAX),
            offset,
            evidence,
        });
    }
    out.sort_by_key(|c| (c.distance, c.offset, c.inst));
    Ok(out)
}

/// Nodes reachable from the entry without passing through `avoid`.
fn reachable_avoiding(g: &crate::analysis::Digraph, avoid: usize) -> Vec<bool> {
    let mut seen = vec![false; g.len()];
    if avoid == 0 {
        return seen;
    }
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(n) = stack.pop() {
        for &s in &g.succs[n] {
            if s != avoid && !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
    }
    seen
}

/// Finds the neck and returns a copy of `p` with a marker placed there.
pub fn mine_neck(p: &Program, cfg: &MinerConfig) -> Result<(Program, NeckReport), MineError> {
    if let Some(existing) = p.neck() {
        return Err(MineError::ExistingNeck(existing));
    }
    let start = heuristic_start(p, cfg)?;
    let candidates = structural_candidates(p, start)?;
    let chosen = candidates
        .iter()
        .filter(|c| c.admissible())
        .min_by_key(|c| (c.entry_distance, c.inst))
        .ok_or(MineError::NoAdmissibleCandidate(start))?;
    let f = p.function_of(start).expect("start resolves");
    let (sb, _) = f.locate(start).expect("start resolves");
    let out = p.insert_neck_marker(chosen.inst).map_err(|_| MineError::UnknownInstId(chosen.inst))?;
    let report = NeckReport {
        category: cfg.category,
        function: f.name.clone(),
        start,
        start_block: f.blocks[sb].label.clone(),
        chosen: chosen.inst,
        neck_block: chosen.block.clone(),
        marker: out.neck().expect("marker inserted"),
        candidates: candidates.clone(),
    };
    Ok((out, report))
}

/// Candidate evidence keyed by block label, for reports and tests.
pub fn evidence_by_block(candidates: &[NeckCandidate]) -> BTreeMap<&str, Evidence> {
    candidates.iter().map(|c| (c.block.as_str(), c.evidence)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    const HEAD: &str = "fn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\n";

    #[test]
    fn main_without_argv_use_has_no_match() {
        let p = parse_program(&format!("{HEAD}entry:\n  ret 0\n}}\n")).unwrap();
        let cfg = MinerConfig::new(ProgramCategory::CommandLine);
        assert_eq!(heuristic_start(&p, &cfg), Err(MineError::NoHeuristicMatch));
    }

    #[test]
    fn argv_use_outside_loop_is_ignored() {
        let p = parse_program(&format!(
            "{HEAD}entry:\n  %a = index %argv, 1\n  %s = load %a\n  call @print_str, %s\n  ret 0\n}}\n"
        ))
        .unwrap();
        let cfg = MinerConfig::new(ProgramCategory::CommandLine);
        assert_eq!(heuristic_start(&p, &cfg), Err(MineError::NoHeuristicMatch));
    }

    #[test]
    fn config_start_is_the_parsing_call() {
        let p = parse_program(&format!(
            "{HEAD}entry:\n  %b = alloca arr<byte, 16>\n  %n = call @read_cfg_line, %b, 16\n  ret 0\n}}\n"
        ))
        .unwrap();
        let cfg = MinerConfig::new(ProgramCategory::ConfigFile);
        assert_eq!(heuristic_start(&p, &cfg), Ok(InstId(1)));
        let none = MinerConfig { file_parsing_apis: vec![], ..cfg };
        assert_eq!(heuristic_start(&p, &none), Err(MineError::NoParsingApis));
    }

    #[test]
    fn chain_blocks_are_all_admissible() {
        let p = parse_program(&format!(
            "{HEAD}entry:\n  %b = alloca arr<byte, 16>\n  %n = call @read_cfg_line, %b, 16\n  br x\nx:\n  br y\ny:\n  ret 0\n}}\n"
        ))
        .unwrap();
        let c = structural_candidates(&p, InstId(1)).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(NeckCandidate::admissible));
        let (necked, report) = mine_neck(&p, &MinerConfig::new(ProgramCategory::ConfigFile)).unwrap();
        assert_eq!(report.chosen, InstId(2));
        assert_eq!(report.neck_block, "entry");
        assert_eq!(necked.neck(), Some(report.marker));
    }

    #[test]
    fn skippable_block_is_not_executed_once() {
        let p = parse_program(&format!(
            "{HEAD}entry:\n  %b = alloca arr<byte, 16>\n  %n = call @read_cfg_line, %b, 16\n  cbr %n, maybe, join\nmaybe:\n  br join\njoin:\n  ret 0\n}}\n"
        ))
        .unwrap();
        let c = structural_candidates(&p, InstId(1)).unwrap();
        let ev = evidence_by_block(&c);
        assert!(!ev["maybe"].executed_once_proxy);
        assert!(ev["join"].executed_once_proxy && ev["join"].dominates_rest);
    }
}
