//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach the console.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use saferet::automata::{template_dra, Dra, RabinPair};
use saferet::chain::transient_visits;
use saferet::execution::{option_interrupt_trials, simulate, RequestLaw, SimConfig, SimulationReport};
use saferet::model::{LabeledMdp, Mdp};
use saferet::oracle::{brute_force_accepting_union, certify_template, random_dra, random_mdp, template_catalog, LassoBudget, with_sinks};
use saferet::planner::{plan_baseline, plan_hierarchical, HierarchicalPlan, Plan, PlanConfig};
use saferet::product::{build_product, compute_amecs, ProductMdp};
use saferet::reach::{all_allowed, max_reach_values};
use saferet::synthesis::{max_reach_lp, SafetyMode};
use saferet::workspace::{corpus, grid_to_mdp, terrain_to_mdp, GridSpec, TerrainSpec};
use saferet::Error;

// Tolerances and budgets.
const C1_LIMIT: Duration = Duration::from_secs(60);
const C2_LIMIT: Duration = Duration::from_secs(60);
const C3_TOL: f64 = 1e-6;
const C4_RUNS: usize = 10_000;
const C4_LIMIT: Duration = Duration::from_secs(300);
const C5_RUNS: usize = 100;
const C5_LIMIT: Duration = Duration::from_secs(600);
const C6_RUNS: usize = 100;
const C6_RATIO: f64 = 1.10;
const C8_TOL: f64 = 1e-6;
const C8_RUNS: usize = 10_000;
const C8_TRACES: usize = 500;
const C9_TRIALS: usize = 1_000;
const BOUND_SLACK: f64 = 1e-9;
const SIGMAS: f64 = 3.0;

const RETURN: &str = "safe_return(true; bs)";

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn dra(spec: &str) -> Dra {
    template_dra(&spec.parse().expect("template parses")).expect("template builds")
}

fn grid_model(text: &str) -> LabeledMdp {
    grid_to_mdp(&GridSpec::parse(text).unwrap()).unwrap()
}

fn terrain_model(text: &str) -> LabeledMdp {
    terrain_to_mdp(&TerrainSpec::parse(text).unwrap()).unwrap()
}

fn cfg(chi_o: f64, chi_r: f64, mode: SafetyMode) -> PlanConfig {
    PlanConfig { chi_o, chi_r, safety_mode: mode, ..Default::default() }
}

fn sim(runs: usize, horizon: usize, seed: u64, request: RequestLaw) -> SimConfig {
    SimConfig { runs, horizon, seed, request, ..Default::default() }
}

/// Lower confidence bound `p - k sigma` for a rate estimated from `n` trials.
fn lower_bound(p: f64, n: usize) -> f64 {
    p - SIGMAS * (p * (1.0 - p) / n as f64).sqrt()
}

fn plan(m: &LabeledMdp, hier: bool, task: &str, c: &PlanConfig) -> saferet::Result<Plan> {
    if hier {
        plan_hierarchical(m, &dra(task), &dra(RETURN), c).map(Plan::Hierarchical)
    } else {
        plan_baseline(m, &dra(task), &dra(RETURN), c).map(Plan::Baseline)
    }
}

fn method(hier: bool) -> &'static str {
    if hier {
        "hier"
    } else {
        "baseline"
    }
}

fn c1_automata_oracle() -> Outcome {
    let t = Instant::now();
    let results: Vec<(String, usize, usize)> = template_catalog()
        .into_par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let (checked, bad, _) = certify_template(&spec, LassoBudget { seed: i as u64, ..Default::default() }).unwrap();
            (spec.to_string(), checked, bad)
        })
        .collect();
    let elapsed = t.elapsed();
    let lassos: usize = results.iter().map(|r| r.1).sum();
    let bad: Vec<String> = results.iter().filter(|r| r.2 > 0).map(|r| format!("{} ({})", r.0, r.2)).collect();
    (
        bad.is_empty() && elapsed < C1_LIMIT,
        format!(
            "{} templates, {} lassos, mismatches: {}, {:.1}s",
            results.len(),
            lassos,
            if bad.is_empty() { "none".into() } else { bad.join(", ") },
            elapsed.as_secs_f64()
        ),
    )
}

fn random_product(rng: &mut ChaCha8Rng, states: std::ops::RangeInclusive<usize>, q: usize, max: usize) -> ProductMdp {
    loop {
        let n = rng.gen_range(states.clone());
        let m = random_mdp(rng, n, 3, &["a", "b"]);
        let pairs = rng.gen_range(1..=2);
        let qs = rng.gen_range(1..=q);
        let d = random_dra(rng, &["a", "b"], qs, pairs);
        let p = build_product(&m, &d).unwrap();
        if p.num_states() <= max {
            return p;
        }
    }
}

fn c2_amec_brute_force() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut wrong = 0;
    let mut nonempty = 0;
    for _ in 0..200 {
        let p = random_product(&mut rng, 1..=4, 2, 8);
        let bad: Vec<usize> = (0..p.num_states()).filter(|&s| p.rejecting[s]).collect();
        let pairs: Vec<RabinPair> = p
            .pairs
            .iter()
            .map(|pr| RabinPair::new(pr.fin.iter().chain(&bad).copied(), pr.inf.iter().copied()))
            .collect();
        let slow = brute_force_accepting_union(&p, &pairs);
        wrong += (compute_amecs(&p).union() != slow) as usize;
        nonempty += slow.contains(&true) as usize;
    }
    let elapsed = t.elapsed();
    (
        wrong == 0 && elapsed < C2_LIMIT,
        format!("200 products, {} with components, {} unequal, {:.1}s", nonempty, wrong, elapsed.as_secs_f64()),
    )
}

fn c3_lp_vs_vi() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    let mut products = 0;
    let mut fractional = 0;
    while products < 100 {
        let p = random_product(&mut rng, 5..=25, 2, 50);
        let amec = compute_amecs(&p);
        let target: Vec<bool> = if amec.is_empty() {
            (0..p.num_states()).map(|_| rng.gen_bool(0.1)).collect()
        } else {
            amec.union()
        };
        if !target.contains(&true) {
            continue;
        }
        products += 1;
        let p = with_sinks(&p, &mut rng, 0.15, &target);
        let vi = max_reach_values(&p, &target, &all_allowed);
        for (s, &v) in vi.iter().enumerate() {
            let lp = max_reach_lp(&p, &target, s).unwrap();
            worst = worst.max((lp - v).abs());
            probes += 1;
            fractional += (v > 1e-6 && v < 1.0 - 1e-6) as usize;
        }
    }
    (worst < C3_TOL, format!("100 products, {} states compared ({} fractional), max |LP - VI| = {:.2e}", probes, fractional, worst))
}

fn c4_bounds_on_office() -> Outcome {
    let t = Instant::now();
    let m = grid_model(corpus::OFFICE);
    let task = "surveil(o1, o2)";
    let mut ok = true;
    let mut parts = Vec::new();
    for hier in [false, true] {
        let p = plan(&m, hier, task, &cfg(0.8, 0.9, SafetyMode::Cumulative)).unwrap();
        let r = simulate(&m, &p, &sim(C4_RUNS, 500, 41, RequestLaw::Never)).unwrap();
        let sat_ok = r.sat_rate >= lower_bound(0.8, C4_RUNS);
        let p = plan(&m, hier, task, &cfg(0.8, 0.9, SafetyMode::Statewise)).unwrap();
        let r2 = simulate(&m, &p, &sim(C4_RUNS, 500, 42, RequestLaw::Geometric { rate: 0.01 })).unwrap();
        let safe = r2.safe_rate.unwrap_or(0.0);
        let safe_ok = r2.requests > 0 && safe >= lower_bound(0.9, r2.requests);
        ok &= sat_ok && safe_ok;
        parts.push(format!("{}: sat {:.4}, safe {:.4} over {} requests", method(hier), r.sat_rate, safe, r2.requests));
    }
    let elapsed = t.elapsed();
    ok &= elapsed < C4_LIMIT;
    (ok, format!("{}; {:.1}s", parts.join("; "), elapsed.as_secs_f64()))
}

fn c5_sweep_trend() -> Outcome {
    let t = Instant::now();
    let m = grid_model(corpus::SWEEP);
    let task = "avoid_reach(debris, ex)";
    let run = |chi_r: f64| -> SimulationReport {
        let p = plan(&m, false, task, &cfg(0.5, chi_r, SafetyMode::Statewise)).unwrap();
        simulate(&m, &p, &sim(C5_RUNS, 200, 5, RequestLaw::Never)).unwrap()
    };
    let safe = run(0.9);
    let free = run(0.0);
    let infeasible = matches!(plan(&m, false, task, &cfg(0.9, 0.9, SafetyMode::Statewise)), Err(Error::TaskInfeasible { .. }));
    let elapsed = t.elapsed();
    (
        safe.mean_cost < free.mean_cost && safe.trapped_rate < free.trapped_rate && infeasible && elapsed < C5_LIMIT,
        format!(
            "cost {:.1} vs {:.1}, trapped {:.2} vs {:.2} (chi_r 0.9 vs 0.0), chi_o 0.9 infeasible: {}, {:.1}s",
            safe.mean_cost,
            free.mean_cost,
            safe.trapped_rate,
            free.trapped_rate,
            infeasible,
            elapsed.as_secs_f64()
        ),
    )
}

fn c6_hardware_suffix_cost() -> Outcome {
    let m = grid_model(corpus::HARDWARE);
    let cost = |hier: bool| -> f64 {
        let p = plan(&m, hier, "surveil(p1, p2)", &cfg(0.8, 0.9, SafetyMode::Cumulative)).unwrap();
        let r = simulate(&m, &p, &sim(C6_RUNS, 500, 6, RequestLaw::Never)).unwrap();
        r.mean_suffix_cost.unwrap_or(f64::INFINITY)
    };
    let (b, h) = (cost(false), cost(true));
    (h <= C6_RATIO * b, format!("suffix cost baseline {:.4}, hier {:.4}, ratio {:.4}", b, h, h / b))
}

fn c7_scaling() -> Outcome {
    let task = "surveil(p1, p2)";
    let grid = GridSpec::parse(corpus::SCALING).unwrap();
    let m1 = grid_to_mdp(&grid).unwrap();
    let m2 = grid_to_mdp(&grid.refine(2).unwrap()).unwrap();
    let c = PlanConfig::default();
    // best of three to damp scheduler noise
    let time = |hier: bool, m: &LabeledMdp| -> (Duration, usize) {
        let mut best = Duration::MAX;
        let mut size = 0;
        for _ in 0..3 {
            let t = Instant::now();
            let p = plan(m, hier, task, &c).unwrap();
            best = best.min(t.elapsed());
            size = p.task_product_size();
        }
        (best, size)
    };
    let (tb, nb) = time(false, &m1);
    let (th, n1) = time(true, &m1);
    let (_, n2) = time(true, &m2);
    (
        th < tb && n2 <= n1,
        format!(
            "30x30: baseline {:.3}s ({} states), hier {:.3}s ({} states); refined x2: hier {} states",
            tb.as_secs_f64(),
            nb,
            th.as_secs_f64(),
            n1,
            n2
        ),
    )
}

fn c8_terrain() -> Outcome {
    let t = TerrainSpec::parse(corpus::TERRAIN).unwrap();
    let m = terrain_to_mdp(&t).unwrap();
    let coords = m.coords.clone().unwrap();
    let deepest = t.depth.iter().flatten().cloned().fold(f64::MIN, f64::max);
    let basin: Vec<bool> = coords.iter().map(|&(r, c)| t.depth[r as usize][c as usize] >= deepest).collect();
    let base = m.states_with("bs");
    let mut ok = true;
    let mut parts = Vec::new();
    for hier in [false, true] {
        let p = plan(&m, hier, "surveil(s1, s2)", &cfg(0.8, 0.9, SafetyMode::Statewise)).unwrap();
        let v = p.low_level_return_values(m.num_states());
        let basin_max = (0..m.num_states()).filter(|&s| basin[s]).map(|s| v[s]).fold(0.0, f64::max);
        let base_min = base.iter().map(|&s| v[s]).fold(1.0, f64::min);
        // entering a zero-value state marks the run trapped, so with the basin
        // at value zero the trapped count bounds basin entries; the kept
        // traces check entries directly
        let mut c = sim(C8_RUNS, 500, 8, RequestLaw::Geometric { rate: 0.01 });
        c.keep_traces = C8_TRACES;
        let r = simulate(&m, &p, &c).unwrap();
        let trapped = r.outcomes.iter().filter(|o| o.trapped).count();
        let entries = r.traces.iter().flat_map(|tr| &tr.steps).filter(|st| basin[st.x]).count();
        ok &= basin_max < C8_TOL && base_min >= 1.0 - C8_TOL && entries == 0 && trapped == 0;
        parts.push(format!(
            "{}: basin max {:.1e}, base min {:.6}, trapped runs {}, basin entries in {} traces {}",
            method(hier),
            basin_max,
            base_min,
            trapped,
            r.traces.len(),
            entries
        ));
    }
    (ok, parts.join("; "))
}

/// Expected sum of extended return values along an option, recomputed from
/// its rule.
fn option_occupancy_value(m: &LabeledMdp, plan: &HierarchicalPlan, option: usize) -> f64 {
    let opt = &plan.task_semi.options[option];
    let n = m.num_states();
    let is_sink: Vec<bool> =
        (0..n).map(|s| (s != opt.source && plan.task_semi.semi_state(s).is_some()) || !opt.rule.is_defined(s)).collect();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|s| {
            if is_sink[s] {
                return Vec::new();
            }
            let mut row = Vec::new();
            for &(a, w) in opt.rule.get(s) {
                for &(t, q) in &m.choice(s, a).unwrap().succ {
                    row.push((t, w * q));
                }
            }
            row
        })
        .collect();
    let tv = transient_visits(&rows, &is_sink, opt.source);
    tv.states.iter().zip(&tv.visits).map(|(&s, &k)| k * plan.extended.values[s]).sum()
}

fn c9_option_safety() -> Outcome {
    let maps: [(&str, LabeledMdp, &str, f64); 5] = [
        ("office", grid_model(corpus::OFFICE), "surveil(o1, o2)", 0.8),
        ("sweep", grid_model(corpus::SWEEP), "avoid_reach(debris, ex)", 0.5),
        ("hardware", grid_model(corpus::HARDWARE), "surveil(p1, p2)", 0.8),
        ("terrain", terrain_model(corpus::TERRAIN), "surveil(s1, s2)", 0.8),
        ("scaling", grid_model(corpus::SCALING), "surveil(p1, p2)", 0.8),
    ];
    let chi_r = 0.9;
    let mut ok = true;
    let mut options = 0;
    let mut worst_rate: f64 = 1.0;
    let mut worst_score = f64::INFINITY;
    let mut failures = Vec::new();
    for (name, m, task, chi_o) in &maps {
        let Plan::Hierarchical(p) = plan(m, true, task, &cfg(*chi_o, chi_r, SafetyMode::Statewise)).unwrap() else {
            unreachable!()
        };
        for k in 0..p.task_semi.options.len() {
            let (good, n) = option_interrupt_trials(m, &p, k, C9_TRIALS, 500, 9 + k as u64).unwrap();
            let rate = good as f64 / n as f64;
            options += 1;
            worst_rate = worst_rate.min(rate);
            if rate < lower_bound(chi_r, n) {
                ok = false;
                failures.push(format!("{} option {} rate {:.3}", name, k, rate));
            }
        }
        let Plan::Hierarchical(p) = plan(m, true, task, &cfg(*chi_o, chi_r, SafetyMode::Cumulative)).unwrap() else {
            unreachable!()
        };
        for k in 0..p.task_semi.options.len() {
            let score = option_occupancy_value(m, &p, k);
            worst_score = worst_score.min(score);
            if score < chi_r - BOUND_SLACK {
                ok = false;
                failures.push(format!("{} cumulative option {} value {:.4}", name, k, score));
            }
        }
    }
    (
        ok,
        format!(
            "{} statewise options, worst interrupt return rate {:.4}; worst cumulative value {:.4}{}",
            options,
            worst_rate,
            worst_score,
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    )
}

fn saferet(args: &[&str], dir: &Path) -> (bool, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_saferet")).args(args).current_dir(dir).output().expect("binary runs");
    (out.status.success(), out.stdout)
}

fn c10_determinism() -> Outcome {
    let dir: PathBuf = std::env::temp_dir().join(format!("saferet-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let map = dir.join("office.map");
    std::fs::write(&map, corpus::OFFICE).unwrap();
    let read = |f: &str| std::fs::read(dir.join(f)).unwrap_or_default();
    let mut ok = saferet(&["build-grid", "office.map", "-o", "model.json"], &dir).0;
    let mut compared = 0;
    for m in ["baseline", "hier"] {
        let mut outputs = Vec::new();
        for round in 0..2 {
            let plan_file = format!("{}{}.json", m, round);
            let trace_file = format!("{}{}.csv", m, round);
            let planned = saferet(
                &[
                    "plan", "--model", "model.json", "--method", m, "--task", "surveil(o1, o2)", "--return", RETURN, "-o",
                    &plan_file,
                ],
                &dir,
            )
            .0;
            let (simulated, report) = saferet(
                &[
                    "simulate", "--model", "model.json", "--plan", &plan_file, "--runs", "50", "--seed", "7",
                    "--request", "geometric:0.02", "--traces", &trace_file, "--keep-traces", "5",
                ],
                &dir,
            );
            ok &= planned && simulated;
            outputs.push((read(&plan_file), report, read(&trace_file)));
        }
        let (a, b) = (&outputs[0], &outputs[1]);
        ok &= !a.0.is_empty() && !a.1.is_empty() && !a.2.is_empty() && a == b;
        compared += 3;
    }
    let _ = std::fs::remove_dir_all(&dir);
    (ok, format!("{} plan/report/trace file pairs compared byte for byte", compared))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("automata oracle equivalence", c1_automata_oracle),
        ("AMEC brute-force equivalence", c2_amec_brute_force),
        ("LP/VI agreement", c3_lp_vs_vi),
        ("bound enforcement on office map", c4_bounds_on_office),
        ("sweep trend and infeasibility", c5_sweep_trend),
        ("hierarchical suffix cost within 10%", c6_hardware_suffix_cost),
        ("scaling order and product size", c7_scaling),
        ("terrain non-ergodicity", c8_terrain),
        ("safety-ensured options", c9_option_safety),
        ("CLI determinism", c10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.ends_with(f.as_str())) {
            continue;
        }
        let (pass, detail) = check();
        println!("{} {:>2} {}: {}", if pass { "PASS" } else { "FAIL" }, i + 1, name, detail);
        failed += (!pass) as usize;
    }
    if failed > 0 {
        println!("{} criteria failed", failed);
        std::process::exit(1);
    }
}
