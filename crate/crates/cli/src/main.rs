use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use neckcut::analysis::build_cfg;
use neckcut::constconv::{apply_conversion, plan_conversion};
use neckcut::harness::{diff_run, random_delayed_inputs, stats, StdinProfile, Verdict};
use neckcut::interp::{run_full, run_to_neck, Invocation, PartialState};
use neckcut::ir::{parse_program, print_program, validate, Program};
use neckcut::neck::{mine_neck, ProgramCategory};
use neckcut::pipeline::{run_pipeline, PipelineConfig};
use neckcut::simplify::run_simplify;

#[derive(Parser)]
#[command(name = "neckcut", version, about = "Specialize IR programs for fixed command-line or config inputs")]
struct Cli {
    /// Pipeline settings as JSON; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Directory for output files (defaults to the input's directory).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct InputArgs {
    /// Supplied argument; repeat for several.
    #[arg(long = "arg", value_name = "A", allow_hyphen_values = true)]
    args: Vec<String>,
    /// File served to `read_cfg_line`.
    #[arg(long, value_name = "FILE")]
    cfg_input: Option<PathBuf>,
    #[arg(long)]
    step_budget: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct MinerArgs {
    /// Program category: cli or config.
    #[arg(long)]
    category: Option<ProgramCategory>,
    /// File-parsing API for the config category; repeat for several.
    #[arg(long = "parse-api", value_name = "NAME")]
    parse_apis: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Find the neck and write `<prog>.necked.ir` and `<prog>.neck.json`.
    Mine {
        program: PathBuf,
        #[command(flatten)]
        miner: MinerArgs,
    },
    /// Run a necked program to its neck and write `<prog>.state.json`.
    InterpretToNeck {
        program: PathBuf,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Apply a captured state and write `<prog>.cc.ir` and `<prog>.ccplan.json`.
    Convert {
        program: PathBuf,
        #[arg(long)]
        state: PathBuf,
    },
    /// Simplify to a fixed point and write `<prog>.debloated.ir` and `<prog>.report.json`.
    Simplify {
        program: PathBuf,
        /// State file whose visited functions guide function removal.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Run every phase and write `<prog>.debloated.ir` and `<prog>.report.json`.
    Debloat {
        program: PathBuf,
        #[command(flatten)]
        miner: MinerArgs,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Execute a program and print its output and exit status.
    Run {
        program: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_name = "FILE")]
        stdin: Option<PathBuf>,
    },
    /// Compare two programs over random stdin and write `<orig>-<spec>.diff.json`.
    Diff {
        original: PathBuf,
        specialized: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value = "text")]
        stdin_profile: StdinProfile,
    },
    /// Print size metrics.
    Stats {
        program: PathBuf,
        /// Also print every function's CFG in DOT form.
        #[arg(long)]
        dump_cfg: bool,
    },
}

/// A failure together with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const DIFF_FAILED: u8 = 1;
const INPUT_ERROR: u8 = 2;
const PHASE_ERROR: u8 = 3;

fn input_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: INPUT_ERROR, error: e.into() }
}

fn phase_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: PHASE_ERROR, error: e.into() }
}

type Outcome = Result<ExitCode, Failure>;

struct Ctx {
    json: bool,
    verbose: bool,
    out_dir: Option<PathBuf>,
    base: Option<PipelineConfig>,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Base name of the program behind `input`, without phase suffixes.
    fn stem(input: &Path) -> String {
        let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut stem = name.strip_suffix(".ir").unwrap_or(&name).to_string();
        for suffix in [".necked", ".cc", ".debloated"] {
            if let Some(s) = stem.strip_suffix(suffix) {
                stem = s.to_string();
                break;
            }
        }
        stem
    }

    fn output(&self, input: &Path, name: &str) -> PathBuf {
        let dir = match &self.out_dir {
            Some(d) => d.clone(),
            None => input.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        dir.join(name)
    }

    fn write(&self, path: &Path, contents: &str) -> Result<(), Failure> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(input_err)?;
        }
        fs::write(path, contents).with_context(|| format!("writing {}", path.display())).map_err(input_err)?;
        self.note(format!("wrote {}", path.display()));
        Ok(())
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).expect("reports serialize");
        self.write(path, &(text + "\n"))
    }

    /// Prints `summary` normally, or `value` as JSON under `--json`.
    fn report<T: Serialize>(&self, value: &T, summary: &str) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
        } else {
            println!("{summary}");
        }
    }

    /// Settings from `--config` overlaid with command-line flags.
    fn pipeline(&self, miner: &MinerArgs, input: &InputArgs) -> Result<PipelineConfig, Failure> {
        let mut cfg = match (&self.base, miner.category) {
            (Some(base), _) => base.clone(),
            (None, Some(cat)) => PipelineConfig::new(cat, &[]),
            (None, None) => PipelineConfig::new(ProgramCategory::CommandLine, &[]),
        };
        if let Some(cat) = miner.category {
            cfg.category = cat;
        }
        if !miner.parse_apis.is_empty() {
            cfg.parse_apis = miner.parse_apis.clone();
        }
        if !input.args.is_empty() {
            cfg.supplied_args = input.args.clone();
        }
        if let Some(b) = input.step_budget {
            cfg.step_budget = b;
        }
        if let Some(path) = &input.cfg_input {
            cfg.config_file = Some(path.display().to_string());
        }
        if let Some(path) = &cfg.config_file {
            let bytes = fs::read(path).with_context(|| format!("reading config input {path}")).map_err(input_err)?;
            cfg.config_input = Some(bytes);
        }
        Ok(cfg)
    }
}

fn load_program(path: &Path) -> Result<Program, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(input_err)?;
    let p = parse_program(&text).with_context(|| format!("parsing {}", path.display())).map_err(input_err)?;
    let diags = validate(&p);
    if let Some(first) = diags.first() {
        return Err(input_err(anyhow!("{} is invalid: {first} ({} problems)", path.display(), diags.len())));
    }
    Ok(p)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(input_err)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(input_err)
}

fn mine(ctx: &Ctx, program: &Path, miner: &MinerArgs) -> Outcome {
    let p = load_program(program)?;
    let cfg = ctx.pipeline(miner, &InputArgs::default())?;
    let (necked, report) = mine_neck(&p, &cfg.miner()).map_err(phase_err)?;
    let stem = Ctx::stem(program);
    ctx.write(&ctx.output(program, &format!("{stem}.necked.ir")), &print_program(&necked))?;
    ctx.write_json(&ctx.output(program, &format!("{stem}.neck.json")), &report)?;
    let admissible = report.candidates.iter().filter(|c| c.admissible()).count();
    ctx.report(
        &report,
        &format!("neck before {} in block {} ({admissible} admissible candidates)", report.chosen, report.neck_block),
    );
    Ok(ExitCode::SUCCESS)
}

fn interpret(ctx: &Ctx, program: &Path, input: &InputArgs) -> Outcome {
    let p = load_program(program)?;
    let cfg = ctx.pipeline(&MinerArgs::default(), input)?;
    let state = run_to_neck(&p, &cfg.invocation()).map_err(phase_err)?;
    let out = ctx.output(program, &format!("{}.state.json", Ctx::stem(program)));
    ctx.write_json(&out, &state)?;
    let lines: Vec<String> = state.entries.iter().map(|e| format!("{} = {}", e.label, e.value)).collect();
    ctx.report(&state, &lines.join("\n"));
    Ok(ExitCode::SUCCESS)
}

fn convert(ctx: &Ctx, program: &Path, state: &Path) -> Outcome {
    let p = load_program(program)?;
    let st: PartialState = load_json(state)?;
    let neck = p.neck().ok_or_else(|| input_err(anyhow!("{} has no neck marker", program.display())))?;
    let plan = plan_conversion(&p, &st, neck).map_err(phase_err)?;
    let converted = apply_conversion(&p, &plan).map_err(phase_err)?;
    let stem = Ctx::stem(program);
    ctx.write(&ctx.output(program, &format!("{stem}.cc.ir")), &print_program(&converted))?;
    ctx.write_json(&ctx.output(program, &format!("{stem}.ccplan.json")), &plan)?;
    ctx.report(
        &plan,
        &format!(
            "{} pre-neck and {} post-neck rewrites, {} skipped",
            plan.pre_neck.len(),
            plan.post_neck.len(),
            plan.skipped.len()
        ),
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SimplifyReport {
    passes: Vec<neckcut::simplify::PassReport>,
    before: neckcut::harness::SizeStats,
    after: neckcut::harness::SizeStats,
}

fn simplify(ctx: &Ctx, program: &Path, state: Option<&Path>) -> Outcome {
    let p = load_program(program)?;
    let visited: BTreeSet<String> = match state {
        Some(s) => load_json::<PartialState>(s)?.visited_funcs,
        None => BTreeSet::new(),
    };
    let (out, passes) = run_simplify(&p, &visited);
    let report = SimplifyReport { passes, before: stats(&p), after: stats(&out) };
    let stem = Ctx::stem(program);
    ctx.write(&ctx.output(program, &format!("{stem}.debloated.ir")), &print_program(&out))?;
    ctx.write_json(&ctx.output(program, &format!("{stem}.report.json")), &report)?;
    ctx.report(&report, &format!("{} -> {} instructions", report.before.ir_insts, report.after.ir_insts));
    Ok(ExitCode::SUCCESS)
}

fn debloat(ctx: &Ctx, program: &Path, miner: &MinerArgs, input: &InputArgs) -> Outcome {
    let p = load_program(program)?;
    let cfg = ctx.pipeline(miner, input)?;
    let artifacts = run_pipeline(&p, &cfg).map_err(phase_err)?;
    let stem = Ctx::stem(program);
    ctx.write(&ctx.output(program, &format!("{stem}.debloated.ir")), &print_program(&artifacts.debloated))?;
    ctx.write_json(&ctx.output(program, &format!("{stem}.report.json")), &artifacts.report)?;
    let r = &artifacts.report;
    ctx.report(
        r,
        &format!(
            "instructions {} -> {}, functions {} -> {}, blocks {} -> {}, globals {} -> {}",
            r.before.ir_insts,
            r.after.ir_insts,
            r.before.funcs,
            r.after.funcs,
            r.before.basic_blocks,
            r.after.basic_blocks,
            r.before.globals,
            r.after.globals
        ),
    );
    Ok(ExitCode::SUCCESS)
}

fn run(ctx: &Ctx, program: &Path, input: &InputArgs, stdin: Option<&Path>) -> Outcome {
    let p = load_program(program)?;
    let cfg = ctx.pipeline(&MinerArgs::default(), input)?;
    let mut inv = cfg.invocation();
    inv.stdin = Some(match stdin {
        Some(path) => fs::read(path).with_context(|| format!("reading {}", path.display())).map_err(input_err)?,
        None => Vec::new(),
    });
    let outcome = run_full(&p, &inv).map_err(phase_err)?;
    if ctx.json {
        ctx.report(&outcome, "");
    } else {
        use std::io::Write;
        std::io::stdout().write_all(&outcome.stdout).map_err(input_err)?;
        eprintln!("exit status: {:?}", outcome.exit_status);
    }
    Ok(ExitCode::SUCCESS)
}

fn diff(
    ctx: &Ctx,
    original: &Path,
    specialized: &Path,
    input: &InputArgs,
    seed: Option<u64>,
    trials: Option<usize>,
    profile: StdinProfile,
) -> Outcome {
    let orig = load_program(original)?;
    let spec = load_program(specialized)?;
    let cfg = ctx.pipeline(&MinerArgs::default(), input)?;
    let seed = seed.unwrap_or(cfg.seed);
    let trials = trials.unwrap_or(cfg.trials);
    if trials == 0 {
        return Err(input_err(anyhow!("--trials must be at least 1")));
    }
    let base: Invocation = cfg.invocation();
    let report = diff_run(&orig, &spec, &base, &random_delayed_inputs(seed, trials, profile));
    let name = format!("{}-{}.diff.json", Ctx::stem(original), Ctx::stem(specialized));
    ctx.write_json(&ctx.output(specialized, &name), &report)?;
    ctx.report(&report, &format!("{:?}: {} mismatches in {} trials", report.verdict, report.mismatches.len(), report.trials));
    Ok(if report.verdict == Verdict::Pass { ExitCode::SUCCESS } else { ExitCode::from(DIFF_FAILED) })
}

fn show_stats(ctx: &Ctx, program: &Path, dump_cfg: bool) -> Outcome {
    let p = load_program(program)?;
    let s = stats(&p);
    ctx.report(
        &s,
        &format!("instructions {}, functions {}, blocks {}, globals {}", s.ir_insts, s.funcs, s.basic_blocks, s.globals),
    );
    if dump_cfg {
        for f in &p.functions {
            print!("{}", build_cfg(f).to_dot(&f.name));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Outcome {
    let base = match &cli.config {
        Some(path) => Some(load_json::<PipelineConfig>(path)?),
        None => None,
    };
    let ctx = Ctx { json: cli.json, verbose: cli.verbose, out_dir: cli.out_dir, base };
    match cli.command {
        Command::Mine { program, miner } => mine(&ctx, &program, &miner),
        Command::InterpretToNeck { program, input } => interpret(&ctx, &program, &input),
        Command::Convert { program, state } => convert(&ctx, &program, &state),
        Command::Simplify { program, state } => simplify(&ctx, &program, state.as_deref()),
        Command::Debloat { program, miner, input } => debloat(&ctx, &program, &miner, &input),
        Command::Run { program, input, stdin } => run(&ctx, &program, &input, stdin.as_deref()),
        Command::Diff { original, specialized, input, seed, trials, stdin_profile } => {
            diff(&ctx, &original, &specialized, &input, seed, trials, stdin_profile)
        }
        Command::Stats { program, dump_cfg } => show_stats(&ctx, &program, dump_cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(INPUT_ERROR);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
