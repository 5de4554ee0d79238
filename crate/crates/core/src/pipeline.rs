//! The whole debloating pipeline: mine the neck, interpret up to it,
//! convert the captured state to constants and simplify.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::constconv::{apply_conversion, plan_conversion, ConvError, ConversionPlan, Skipped};
use crate::harness::{reduction_report, stats, Reductions, SizeStats};
use crate::interp::{run_to_neck, verify_neck_state, InterpError, Invocation, PartialState, DEFAULT_STEP_BUDGET};
use crate::ir::{validate, Diagnostic, Program};
use crate::neck::{mine_neck, MineError, MinerConfig, NeckReport, ProgramCategory};
use crate::simplify::{run_simplify, PassReport};

fn default_parse_apis() -> Vec<String> {
    vec!["read_cfg_line".to_string()]
}

fn default_step_budget() -> u64 {
    DEFAULT_STEP_BUDGET
}

fn default_trials() -> usize {
    100
}

/// Every pipeline setting. The JSON file form uses the same keys as the
/// fields below.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PipelineConfig {
    pub category: ProgramCategory,
    #[serde(default = "default_parse_apis")]
    pub parse_apis: Vec<String>,
    #[serde(default)]
    pub supplied_args: Vec<String>,
    #[serde(default = "default_step_budget")]
    pub step_budget: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Path of the configuration file served by `read_cfg_line`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_file: Option<String>,
    /// Contents of `config_file`, loaded by the caller.
    #[serde(skip)]
    pub config_input: Option<Vec<u8>>,
}

impl PipelineConfig {
    pub fn new(category: ProgramCategory, supplied_args: &[&str]) -> PipelineConfig {
        PipelineConfig {
            category,
            parse_apis: default_parse_apis(),
            supplied_args: supplied_args.iter().map(|s| s.to_string()).collect(),
            step_budget: DEFAULT_STEP_BUDGET,
            seed: 0,
            trials: default_trials(),
            config_file: None,
            config_input: None,
        }
    }

    pub fn miner(&self) -> MinerConfig {
        MinerConfig { category: self.category, file_parsing_apis: self.parse_apis.clone() }
    }

    /// The supplied inputs, with stdin left delayed.
    pub fn invocation(&self) -> Invocation {
        Invocation {
            args: self.supplied_args.clone(),
            stdin: None,
            config: self.config_input.clone(),
            step_budget: self.step_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("input program is invalid: {}", .0.first().map(ToString::to_string).unwrap_or_default())]
    Invalid(Vec<Diagnostic>),
    #[error("neck mining: {0}")]
    Mine(#[from] MineError),
    #[error("partial interpretation: {0}")]
    Interpret(#[from] InterpError),
    #[error("constant conversion: {0}")]
    Convert(#[from] ConvError),
    #[error("converted program disagrees with the captured state: {}", .0.join("; "))]
    Inconsistent(Vec<String>),
    #[error("simplified program is invalid: {}", .0.first().map(ToString::to_string).unwrap_or_default())]
    SimplifiedInvalid(Vec<Diagnostic>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StateSummary {
    /// `label = value` per captured variable.
    pub captured: Vec<String>,
    pub excluded: usize,
    pub visited_funcs: BTreeSet<String>,
}

impl StateSummary {
    pub fn of(st: &PartialState) -> StateSummary {
        StateSummary {
            captured: st.entries.iter().map(|e| format!("{} = {}", e.label, e.value)).collect(),
            excluded: st.excluded.len(),
            visited_funcs: st.visited_funcs.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConversionSummary {
    pub pre_neck: usize,
    pub post_neck: usize,
    pub skipped: Vec<Skipped>,
}

impl ConversionSummary {
    pub fn of(plan: &ConversionPlan) -> ConversionSummary {
        ConversionSummary { pre_neck: plan.pre_neck.len(), post_neck: plan.post_neck.len(), skipped: plan.skipped.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DebloatReport {
    pub neck: NeckReport,
    pub state: StateSummary,
    pub conversion: ConversionSummary,
    pub passes: Vec<PassReport>,
    /// Sizes are IR counts; there is no native code to measure.
    pub metric_kind: String,
    pub before: SizeStats,
    pub after: SizeStats,
    pub reduction: Reductions,
}

/// Every intermediate program, for callers that write them out.
#[derive(Clone, Debug)]
pub struct PipelineArtifacts {
    pub necked: Program,
    pub state: PartialState,
    pub plan: ConversionPlan,
    pub converted: Program,
    pub debloated: Program,
    pub report: DebloatReport,
}

pub fn debloat_pipeline(p: &Program, cfg: &PipelineConfig) -> Result<(Program, DebloatReport), PipelineError> {
    run_pipeline(p, cfg).map(|a| (a.debloated, a.report))
}

pub fn run_pipeline(p: &Program, cfg: &PipelineConfig) -> Result<PipelineArtifacts, PipelineError> {
    let diags = validate(p);
    if !diags.is_empty() {
        return Err(PipelineError::Invalid(diags));
    }
    let (necked, neck) = mine_neck(p, &cfg.miner())?;
    let inv = cfg.invocation();
    let state = run_to_neck(&necked, &inv)?;
    let plan = plan_conversion(&necked, &state, neck.marker)?;
    let converted = apply_conversion(&necked, &plan)?;
    let problems = verify_neck_state(&converted, &inv, &state)?;
    if !problems.is_empty() {
        return Err(PipelineError::Inconsistent(problems));
    }
    let (debloated, passes) = run_simplify(&converted, &state.visited_funcs);
    let diags = validate(&debloated);
    if !diags.is_empty() {
        return Err(PipelineError::SimplifiedInvalid(diags));
    }
    let before = stats(p);
    let after = stats(&debloated);
    let report = DebloatReport {
        neck,
        state: StateSummary::of(&state),
        conversion: ConversionSummary::of(&plan),
        passes,
        metric_kind: "ir".to_string(),
        before,
        after,
        reduction: reduction_report(&before, &after),
    };
    Ok(PipelineArtifacts { necked, state, plan, converted, debloated, report })
}
