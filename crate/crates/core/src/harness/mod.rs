//! Differential testing of original against specialized programs, and the
//! size metrics used to report how much was removed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::interp::{run_full, Invocation, RunOutcome};
use crate::ir::{escape_bytes, Program};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SizeStats {
    pub ir_insts: usize,
    pub funcs: usize,
    pub basic_blocks: usize,
    pub globals: usize,
}

pub fn stats(p: &Program) -> SizeStats {
    SizeStats {
        ir_insts: p.functions.iter().map(|f| f.inst_count()).sum(),
        funcs: p.functions.len(),
        basic_blocks: p.functions.iter().map(|f| f.blocks.len()).sum(),
        globals: p.globals.len(),
    }
}

/// Percentage reduction per metric; a metric is absent when it was zero before.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Reductions {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ir_insts: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub funcs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basic_blocks: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub globals: Option<f64>,
}

pub fn reduction_report(before: &SizeStats, after: &SizeStats) -> Reductions {
    let pct = |b: usize, a: usize| (b > 0).then(|| 100.0 * (b as f64 - a as f64) / b as f64);
    Reductions {
        ir_insts: pct(before.ir_insts, after.ir_insts),
        funcs: pct(before.funcs, after.funcs),
        basic_blocks: pct(before.basic_blocks, after.basic_blocks),
        globals: pct(before.globals, after.globals),
    }
}

fn ser_bytes<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&escape_bytes(b))
}

/// Inputs only known when the specialized program runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Extension {
    #[serde(serialize_with = "ser_bytes")]
    pub stdin: Vec<u8>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub extra_args: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StdinProfile {
    /// Newline-separated printable lines.
    Text,
    /// Arbitrary bytes.
    Bytes,
}

impl std::str::FromStr for StdinProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(StdinProfile::Text),
            "bytes" => Ok(StdinProfile::Bytes),
            other => Err(format!("unknown stdin profile `{other}` (expected text or bytes)")),
        }
    }
}

pub const MAX_TEXT_LINES: usize = 50;
pub const MAX_LINE_LEN: usize = 80;
const MAX_RANDOM_BYTES: usize = 512;

/// `n` stdin contents, deterministic per seed.
pub fn random_delayed_inputs(seed: u64, n: usize, profile: StdinProfile) -> Vec<Extension> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let stdin = match profile {
                StdinProfile::Text => {
                    let mut out = Vec::new();
                    for _ in 0..rng.gen_range(0..=MAX_TEXT_LINES) {
                        for _ in 0..rng.gen_range(0..=MAX_LINE_LEN) {
                            let b = if rng.gen_ratio(1, 20) { b'\t' } else { rng.gen_range(0x20u8..=0x7e) };
                            out.push(b);
                        }
                        out.push(b'\n');
                    }
                    if !out.is_empty() && rng.gen_ratio(1, 4) {
                        out.pop();
                    }
                    out
                }
                StdinProfile::Bytes => {
                    let len = rng.gen_range(0..=MAX_RANDOM_BYTES);
                    (0..len).map(|_| rng.gen()).collect()
                }
            };
            Extension { stdin, extra_args: Vec::new() }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum TrialOutcome {
    Ran(RunOutcome),
    Failed(String),
}

impl TrialOutcome {
    fn same(&self, other: &TrialOutcome) -> bool {
        match (self, other) {
            (TrialOutcome::Ran(a), TrialOutcome::Ran(b)) => a.same_behaviour(b),
            (TrialOutcome::Failed(a), TrialOutcome::Failed(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Mismatch {
    pub trial: usize,
    pub invocation: Invocation,
    pub original_outcome: TrialOutcome,
    pub specialized_outcome: TrialOutcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DiffReport {
    pub trials: usize,
    pub mismatches: Vec<Mismatch>,
    pub verdict: Verdict,
}

fn outcome(p: &Program, inv: &Invocation) -> TrialOutcome {
    match run_full(p, inv) {
        Ok(o) => TrialOutcome::Ran(o),
        Err(e) => TrialOutcome::Failed(e.to_string()),
    }
}

/// Runs both programs on `base` extended by each delayed input and compares
/// stdout and exit status.
pub fn diff_run(orig: &Program, spec: &Program, base: &Invocation, delayed: &[Extension]) -> DiffReport {
    let mut mismatches = Vec::new();
    for (trial, ext) in delayed.iter().enumerate() {
        let mut inv = base.clone();
        inv.args.extend(ext.extra_args.iter().cloned());
        inv.stdin = Some(ext.stdin.clone());
        let a = outcome(orig, &inv);
        let b = outcome(spec, &inv);
        if !a.same(&b) {
            mismatches.push(Mismatch { trial, invocation: inv, original_outcome: a, specialized_outcome: b });
        }
    }
    let verdict = if mismatches.is_empty() { Verdict::Pass } else { Verdict::Fail };
    DiffReport { trials: delayed.len(), mismatches, verdict }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn empty_program_has_zero_stats() {
        assert_eq!(stats(&Program::default()), SizeStats::default());
    }

    #[test]
    fn reductions() {
        let s = SizeStats { ir_insts: 10, funcs: 2, basic_blocks: 4, globals: 0 };
        let same = reduction_report(&s, &s);
        assert_eq!(same.funcs, Some(0.0));
        assert_eq!(same.globals, None);
        let after = SizeStats { funcs: 1, ..s };
        assert_eq!(reduction_report(&s, &after).funcs, Some(50.0));
        let grown = SizeStats { ir_insts: 15, ..s };
        assert_eq!(reduction_report(&s, &grown).ir_insts, Some(-50.0));
    }

    #[test]
    fn inputs_are_deterministic_and_printable() {
        let a = random_delayed_inputs(1, 3, StdinProfile::Text);
        assert_eq!(a, random_delayed_inputs(1, 3, StdinProfile::Text));
        assert_ne!(a, random_delayed_inputs(2, 3, StdinProfile::Text));
        for e in random_delayed_inputs(9, 50, StdinProfile::Text) {
            assert!(e.stdin.iter().all(|b| matches!(b, 0x09 | 0x0a | 0x20..=0x7e)));
            let lines: Vec<&[u8]> = e.stdin.split(|b| *b == b'\n').collect();
            assert!(lines.len() <= MAX_TEXT_LINES + 1);
            assert!(lines.iter().all(|l| l.len() <= MAX_LINE_LEN));
        }
    }

    #[test]
    fn identical_programs_pass_and_different_ones_fail() {
        let echo = parse_program(
            "fn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  %b = alloca arr<byte, 64>\n  %n = call @read_line, %b, 64\n  call @print_int, %n\n  ret 0\n}\n",
        )
        .unwrap();
        let other = parse_program(
            "fn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  call @print_int, 0\n  ret 0\n}\n",
        )
        .unwrap();
        let inputs = random_delayed_inputs(3, 20, StdinProfile::Text);
        let base = Invocation::supplied(&[]);
        assert_eq!(diff_run(&echo, &echo, &base, &inputs).verdict, Verdict::Pass);
        let r = diff_run(&echo, &other, &base, &inputs);
        assert_eq!(r.verdict, Verdict::Fail);
        let swapped = diff_run(&other, &echo, &base, &inputs);
        assert_eq!(swapped.mismatches.len(), r.mismatches.len());
    }
}
