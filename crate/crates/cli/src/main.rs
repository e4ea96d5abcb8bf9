use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use saferet::automata::{parse_hoa, parse_ltl, serialize_hoa, template_dra, Dra, TemplateSpec};
use saferet::execution::{comparison_csv, comparison_text, simulate, ComparisonRow, LabelMask, RequestLaw, SimConfig};
use saferet::model::LabeledMdp;
use saferet::planner::{plan_baseline, plan_hierarchical, Plan, PlanConfig};
use saferet::synthesis::SafetyMode;
use saferet::workspace::{grid_to_mdp, terrain_to_mdp, value_grid_csv, value_list_csv, GridSpec, TerrainSpec};
use saferet::{Error, Result};

#[derive(Parser)]
#[command(name = "saferet", version, about = "Plan LTL tasks on labeled MDPs with a probabilistic safe-return guarantee")]
struct Cli {
    /// Worker threads for planning and simulation.
    #[arg(long, global = true, env = "SAFERET_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Office grid map to model JSON.
    BuildGrid(BuildArgs),
    /// Depth-map terrain to model JSON.
    BuildTerrain(BuildArgs),
    /// Template or HOA file to HOA.
    Automaton(AutomatonArgs),
    /// Synthesize a plan.
    Plan(PlanArgs),
    /// Monte-Carlo simulation of a plan.
    Simulate(SimulateArgs),
    /// Return values of a plan as CSV.
    Heatmap(HeatmapArgs),
    /// Plan and simulate several models and methods.
    Compare(CompareArgs),
}

#[derive(Args)]
struct BuildArgs {
    map: PathBuf,
    /// Split every cell into factor x factor cells.
    #[arg(long, default_value_t = 1)]
    refine: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AutomatonArgs {
    /// Template such as `surveil(a, b)` or `safe_return(reach(ex); bs)`, or an
    /// LTL formula built from template shapes, such as `G F a & F G bs`.
    #[arg(long, conflicts_with = "hoa", required_unless_present = "hoa")]
    template: Option<String>,
    #[arg(long)]
    hoa: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Baseline,
    #[value(alias = "hierarchical")]
    Hier,
}

#[derive(Args, Clone)]
struct PlanOpts {
    /// Task automaton: HOA file, template or LTL formula.
    #[arg(long)]
    task: String,
    /// Return automaton: HOA file, template or LTL formula.
    #[arg(long = "return")]
    ret: String,
    #[arg(long, default_value_t = 0.8)]
    chi_o: f64,
    #[arg(long, default_value_t = 0.9)]
    chi_r: f64,
    #[arg(long, default_value = "cumulative")]
    safety_mode: SafetyMode,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Seed recorded in the plan configuration.
    #[arg(long, default_value_t = 0)]
    plan_seed: u64,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "baseline")]
    method: Method,
    #[command(flatten)]
    opts: PlanOpts,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the task product as JSON.
    #[arg(long)]
    dump_product: Option<PathBuf>,
    /// Also write the outbound prefix LP in MPS form.
    #[arg(long)]
    dump_lp: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SimOpts {
    #[arg(long, default_value_t = 1000)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// none, geometric:RATE, fixed:T or uniform:A,B.
    #[arg(long, default_value = "none")]
    request: RequestLaw,
    #[arg(long, default_value_t = 500)]
    horizon: usize,
    /// Hide a proposition after k visits, as `prop@k`; repeatable.
    #[arg(long = "mask")]
    masks: Vec<LabelMask>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Text,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[command(flatten)]
    sim: SimOpts,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    /// Write traces of the first N runs as CSV to this file.
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    keep_traces: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeatmapFormat {
    Grid,
    List,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, value_enum, default_value = "grid")]
    format: HeatmapFormat,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Model JSON files; repeatable.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "baseline,hier")]
    methods: Vec<Method>,
    #[command(flatten)]
    opts: PlanOpts,
    #[command(flatten)]
    sim: SimOpts,
    #[arg(long)]
    csv: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn emit(output: &Option<PathBuf>, text: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_automaton(arg: &str) -> Result<Dra> {
    if Path::new(arg).is_file() {
        return parse_hoa(&std::fs::read_to_string(arg)?);
    }
    spec_automaton(arg)
}

/// Template text, or an LTL formula made of template shapes.
fn spec_automaton(arg: &str) -> Result<Dra> {
    let spec = match arg.parse::<TemplateSpec>() {
        Ok(t) => t,
        Err(e) => match parse_ltl(arg) {
            Ok(f) => TemplateSpec::from_formula(&f)?,
            Err(_) => return Err(e),
        },
    };
    template_dra(&spec)
}

fn plan_config(o: &PlanOpts) -> PlanConfig {
    PlanConfig {
        chi_o: o.chi_o,
        chi_r: o.chi_r,
        safety_mode: o.safety_mode,
        epsilon_suffix: o.epsilon,
        rng_seed: o.plan_seed,
    }
}

fn make_plan(m: &LabeledMdp, method: Method, o: &PlanOpts) -> Result<Plan> {
    let dra_o = load_automaton(&o.task)?;
    let dra_r = load_automaton(&o.ret)?;
    let cfg = plan_config(o);
    Ok(match method {
        Method::Baseline => Plan::Baseline(plan_baseline(m, &dra_o, &dra_r, &cfg)?),
        Method::Hier => Plan::Hierarchical(plan_hierarchical(m, &dra_o, &dra_r, &cfg)?),
    })
}

fn sim_config(s: &SimOpts, keep_traces: usize) -> SimConfig {
    SimConfig {
        runs: s.runs,
        horizon: s.horizon,
        seed: s.seed,
        request: s.request,
        masks: s.masks.clone(),
        keep_traces,
        ..SimConfig::default()
    }
}

fn build(a: &BuildArgs, terrain: bool) -> Result<()> {
    let text = std::fs::read_to_string(&a.map)?;
    let m = if terrain {
        let mut t = TerrainSpec::parse(&text)?;
        if a.refine > 1 {
            let g = t.grid.refine(a.refine)?;
            let k = a.refine;
            t.depth = (0..g.height()).map(|r| (0..g.width()).map(|c| t.depth[r / k][c / k]).collect()).collect();
            t.grid = g;
        }
        terrain_to_mdp(&t)?
    } else {
        grid_to_mdp(&GridSpec::parse(&text)?.refine(a.refine)?)?
    };
    emit(&a.output, &m.to_json())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::BuildGrid(a) => build(&a, false),
        Cmd::BuildTerrain(a) => build(&a, true),
        Cmd::Automaton(a) => {
            let d = match (&a.template, &a.hoa) {
                (Some(t), _) => spec_automaton(t)?,
                (None, Some(p)) => parse_hoa(&std::fs::read_to_string(p)?)?,
                (None, None) => unreachable!("clap requires one source"),
            };
            emit(&a.output, &serialize_hoa(&d))
        }
        Cmd::Plan(a) => {
            let m = LabeledMdp::load(&a.model)?;
            let plan = make_plan(&m, a.method, &a.opts)?;
            if let Some(p) = &a.dump_product {
                std::fs::write(p, plan.task_product_json())?;
            }
            if let Some(p) = &a.dump_lp {
                std::fs::write(p, plan.prefix_lp_mps())?;
            }
            emit(&a.output, &plan.to_json())?;
            if a.output.is_some() {
                let ob = plan.outbound();
                println!("method       {}", plan.method());
                println!("fingerprint  {}", plan.fingerprint());
                println!("product      {} states", plan.task_product_size());
                println!("reach        {:.6}", ob.prefix.reach);
                println!("plan_cost    {:.6}", ob.plan_cost);
            }
            Ok(())
        }
        Cmd::Simulate(a) => {
            let m = LabeledMdp::load(&a.model)?;
            let plan = Plan::load(&a.plan)?;
            let keep = if a.traces.is_some() { a.keep_traces.min(a.sim.runs) } else { 0 };
            let report = simulate(&m, &plan, &sim_config(&a.sim, keep))?;
            if let Some(p) = &a.traces {
                std::fs::write(p, report.traces_csv())?;
            }
            let text = match a.format {
                ReportFormat::Json => report.to_json() + "\n",
                ReportFormat::Text => report.to_string() + "\n",
            };
            emit(&a.output, &text)
        }
        Cmd::Heatmap(a) => {
            let m = LabeledMdp::load(&a.model)?;
            let plan = Plan::load(&a.plan)?;
            if plan.model_hash() != saferet::planner::model_hash(&m) {
                return Err(Error::PlanModelMismatch);
            }
            let v = plan.low_level_return_values(m.labels.len());
            let text = match a.format {
                HeatmapFormat::Grid => value_grid_csv(&m, &v)?,
                HeatmapFormat::List => value_list_csv(&m, &v),
            };
            emit(&a.output, &text)
        }
        Cmd::Compare(a) => {
            let mut rows = Vec::new();
            for path in &a.models {
                let m = LabeledMdp::load(path)?;
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                for &method in &a.methods {
                    let start = Instant::now();
                    let plan = make_plan(&m, method, &a.opts)?;
                    let synthesis_seconds = start.elapsed().as_secs_f64();
                    let report = simulate(&m, &plan, &sim_config(&a.sim, 0))?;
                    rows.push(ComparisonRow {
                        name: name.clone(),
                        method: plan.method().into(),
                        product_states: plan.task_product_size(),
                        synthesis_seconds,
                        plan_cost: plan.outbound().plan_cost,
                        report,
                    });
                }
            }
            let text = if a.csv { comparison_csv(&rows) } else { comparison_text(&rows) };
            emit(&a.output, &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("ERROR USAGE: {}", msg.lines().next().unwrap_or("").trim_start_matches("error: "));
            eprint!("{}", msg);
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("ERROR THREADS: {}", e);
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR {}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(if e.is_infeasibility() { 2 } else { 1 })
        }
    }
}
